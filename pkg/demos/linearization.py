# %% [markdown]
# Linearized DtN map at a nontrivial solution, checked against difference quotients.

# %%
import numpy as np

from dnplab.discretization import make_unit_square_mesh
from dnplab.dtn import dtn_pair
from dnplab.elliptic import EllipticProblem, SolverSettings, solve
from dnplab.linearization import linearize_at, linearized_dtn, linearized_dtn_matrix, metric_2d

mesh = make_unit_square_mesh(12)
x1, x2 = mesh.nodes.T
tight = SolverSettings(grad_tol=1e-13)
prob = EllipticProblem(mesh, 1 + 0.5 * x2, 1.0, 3.0, 2.0, mesh.trace(1 + x1))
s0 = solve(prob, tight)
lin = linearize_at(prob, s0)
f, h = mesh.trace(x2 * x2), mesh.trace(x1 * x2)
target = linearized_dtn(lin, f, h)

# %%
base = dtn_pair(prob, s0, h)
for tau in (1e-2, 5e-3, 2.5e-3):
    pt = prob.with_dirichlet(prob.dirichlet + tau * f)
    q = (dtn_pair(pt, solve(pt, tight), h) - base) / tau
    print(tau, q, abs(q - target))

# %%
traces = [mesh.trace(x1), mesh.trace(x2), f]
L = linearized_dtn_matrix(lin, traces)
print("symmetry defect", np.abs(L - L.T).max())
g, detA = metric_2d(mesh, prob.gamma, s0.w, prob.p)
print("det g range", np.linalg.det(g).min(), np.linalg.det(g).max())
