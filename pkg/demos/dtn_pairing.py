# %% [markdown]
# Weak Dirichlet-to-Neumann pairings and their independence of the test extension.

# %%
import numpy as np

from dnplab.discretization import make_unit_square_mesh
from dnplab.dtn import dtn_pair, dtn_pair_magnitude
from dnplab.elliptic import EllipticProblem, solve

mesh = make_unit_square_mesh(16)
x1, x2 = mesh.nodes.T
prob = EllipticProblem(mesh, 1.0, 1.0, 3.0, 2.0, mesh.trace(1 + 0.5 * np.sin(np.pi * x1)))
sol = solve(prob)
h = mesh.trace(x1 * x2 + x2)

# %%
zero = dtn_pair(prob, sol, h, "zero_interior")
harm = dtn_pair(prob, sol, h, "harmonic")
print(zero, harm, abs(zero - harm) / dtn_pair_magnitude(prob, sol, h))

# %%
# with V = 0 the pairing is homogeneous of degree p - 1 in the data
free = EllipticProblem(mesh, 1.0, 0.0, 3.0, 2.0, prob.dirichlet)
base = dtn_pair(free, solve(free), h)
for lam in (0.5, 2.0):
    scaled = free.with_dirichlet(lam * free.dirichlet)
    print(lam, dtn_pair(scaled, solve(scaled), h) / base, lam**2)
