# %% [markdown]
# CGO vectors for the stretched operator in three and four dimensions.

# %%
import numpy as np

from dnplab.cgo import build_frame, plane_wave_residual

frame = build_frame(3, 3.0, [1.0, 0.0, 0.0], 2.0)
print("s", frame.s, "sqrt(2.5)", np.sqrt(2.5))
print("mu", frame.mu, "eta", frame.eta)
print("null form", frame.null_form())

# %%
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(200):
    n = int(rng.integers(3, 6))
    fr = build_frame(n, rng.uniform(1.1, 5.0), rng.normal(size=n), rng.uniform(0.5, 20.0))
    worst = max(worst, max(fr.invariant_residuals().values()))
print("largest invariant residual over random frames", worst)

# %%
pts = rng.uniform(-1, 1, size=(10, 3))
print("plane-wave residual", plane_wave_residual(2.0, 3.0, frame, pts))
