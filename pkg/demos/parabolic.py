# %% [markdown]
# Doubly nonlinear parabolic problem: separated solutions, implicit Euler and comparison.

# %%
import numpy as np

from dnplab.discretization import make_unit_square_mesh
from dnplab.parabolic import (
    ParabolicProblem,
    TimeGrid,
    alpha,
    comparison_defect,
    separated_lateral,
    separated_solution,
    step_implicit,
)

mesh = make_unit_square_mesh(8)
x1, x2 = mesh.nodes.T
p, m = 3.0, 4.0
eps = 1 + x1
g = mesh.trace(1 + x1 * x2)
prob = ParabolicProblem(mesh, eps, 1.0, p, m, separated_lateral(g, m, p))
exact = separated_solution(prob, g).at(1.0)
print("alpha", alpha(m, p))

# %%
prev = None
for n in (8, 16, 32):
    err = np.sqrt(mesh.lumped_mass @ (step_implicit(prob, TimeGrid(n))[-1] - exact) ** 2)
    print(n, err, "" if prev is None else prev / err)
    prev = err

# %%
# ordered lateral data, crossing initial states
rng = np.random.default_rng(1)
u1 = np.sin(np.pi * x1) * np.sin(np.pi * x2) + rng.uniform(0, 0.5, mesh.n_nodes)
u1[mesh.boundary_nodes] = 0.0
low = ParabolicProblem(mesh, eps, 1.0, p, m, separated_lateral(0.5 * g, m, p))
r1 = step_implicit(low, TimeGrid(16), initial=u1)
r2 = step_implicit(prob, TimeGrid(16), initial=np.zeros(mesh.n_nodes))
print(comparison_defect(r1, r2, eps, m, mesh))
