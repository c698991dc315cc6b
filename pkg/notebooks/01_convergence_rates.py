# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Convergence rates without Monte Carlo
#
# For the linear equation (zero drift) the second moments of the
# semi-implicit Euler scheme are finite sums over the discrete eigenbasis.
# This makes weak and strong errors exact, so fitted slopes carry no
# sampling noise.  White noise (`alpha = 0`) is the rough end of the scale.

# %%
import numpy as np

from spdelab import experiments as ex

ks = [2.0**-e for e in range(6, 13)]
hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256]

# %% [markdown]
# ## Temporal weak error of the squared norm
#
# Spectral space without truncation, so only the time step matters.
# The weak rate approaches `k^{1/2}` for white noise.

# %%
rows = ex.weak_error_exact_quadratic(0.0, None, ks)
for r in rows:
    print(f"k={r['k']:.2e}  |E||X||^2 - E||X_k||^2| = {r['value']:.4e}")
print("k-slope", round(ex.fit_table(rows, "k").slope, 4))

# %% [markdown]
# ## Spatial weak and strong errors
#
# With a very small time step the temporal part is negligible and the
# h-sweep isolates the finite element error.  The weak slope is about
# twice the strong one.

# %%
k_fine = 2.0**-20
weak = ex.weak_error_exact_quadratic(0.0, hs, [k_fine])
strong = ex.strong_error_exact(0.0, hs, [k_fine])
sw, ss = ex.fit_table(weak, "h").slope, ex.fit_table(strong, "h").slope
print(f"weak h-slope {sw:.4f}, strong h-slope {ss:.4f}, ratio {sw / ss:.3f}")

# %% [markdown]
# At a moderate step `k = 2^-12` the temporal error (about `3e-3`) floors
# the spatial sweep and the fitted h-slope collapses.

# %%
floor = ex.weak_error_exact_quadratic(0.0, hs, [2.0**-12])
print([f"{r['value']:.3e}" for r in floor])
print("h-slope at k=2^-12", round(ex.fit_table(floor, "h").slope, 4))

# %% [markdown]
# ## Smoother noise
#
# The strong temporal rate grows with the noise regularity until the
# step-size limit of the scheme.

# %%
kk = [2.0**-e for e in range(3, 9)]
for alpha in (0.0, 1.0, 2.0):
    s = ex.fit_table(ex.strong_error_exact(alpha, None, kk), "k").slope
    print(f"alpha={alpha:g}: strong k-slope {s:.4f}")

# %% [markdown]
# ## Error in a negative norm
#
# Measuring the convolution error in a weaker norm raises the rates.

# %%
nh = ex.negnorm_error_exact(0.4, 0.0, hs[:4], [k_fine])
nk = ex.negnorm_error_exact(0.4, 0.0, None, ks)
print("h-slope", round(ex.fit_table(nh, "h").slope, 4), "k-slope", round(ex.fit_table(nk, "k").slope, 4))
print("largest value", np.max([r["value"] for r in nh]))
