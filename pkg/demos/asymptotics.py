# %% [markdown]
# Small-data expansion of the DtN pairing: leading p-Laplace term plus the potential correction.

# %%
import numpy as np

from dnplab.asymptotics import (
    correction_convergence,
    fit_expansion,
    leading_integral,
    scaling_sweep,
)
from dnplab.discretization import make_unit_square_mesh

mesh = make_unit_square_mesh(12)
x1, x2 = mesh.nodes.T
p, m = 3.0, 4.0
V = np.ones(mesh.n_nodes)
v = 1 + x1 + 0.5 * x2
omega = x1 * x2

sweep = scaling_sweep(mesh, 1.0, V, p, m, v, omega, [0.2, 0.1, 0.05, 0.025, 0.0125])
L = leading_integral(mesh, sweep.gamma, sweep.v, omega, p)
fit = fit_expansion(sweep, L)
print("leading exponent", fit.leading_exponent_fitted, "expected", p - 1)
print("correction exponent", fit.correction_exponent_fitted, "expected", m)
print("coefficient fitted", fit.correction_coeff, "direct", fit.direct_correction)

# %%
conv = correction_convergence(sweep)
for lam, ev, eg in zip(sweep.lambdas, conv.value_errors, conv.gradient_errors):
    print(f"{lam:8.4f}  {ev:.3e}  {eg:.3e}")
