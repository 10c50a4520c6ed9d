# %% [markdown]
# Minimize the doubly nonlinear energy on the unit square and look at the result.

# %%
import numpy as np

from dnplab.discretization import make_unit_square_mesh
from dnplab.elliptic import EllipticProblem, SolverSettings, energy, solve

mesh = make_unit_square_mesh(16)
x1, x2 = mesh.nodes.T
prob = EllipticProblem(mesh, 1 + x1, np.ones(mesh.n_nodes), 3.0, 4.0, mesh.trace(1 + x1 * x2))
sol = solve(prob, SolverSettings(grad_tol=1e-10))
print("iterations", sol.iterations, "relative gradient", sol.achieved_grad_norm)
print("energy", sol.final_energy)

# %%
# maximum principle: |w| never exceeds the boundary data
print("max |w|", np.abs(sol.w).max(), "max |g|", np.abs(prob.dirichlet).max())

# %%
# a different start lands on the same minimizer
start = np.full(mesh.n_nodes, 0.5)
start[mesh.boundary_nodes] = prob.dirichlet
other = solve(prob, SolverSettings(grad_tol=1e-10), initial=start)
print("start dependence", np.abs(other.w - sol.w).max())
print("energy of the interpolated data", energy(prob, mesh.interpolate(lambda a, b: 1 + a * b)))
