# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Operator probes for the discrete heat semigroup
#
# Three families of operator norms are computed exactly in the discrete
# eigenbasis of the P1 finite element Laplacian: the compatibility norm
# between continuous and discrete fractional powers, the error operator
# of the fully discrete scheme and the discrete analytic smoothing bound.

# %%
from spdelab import fem

hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
ks = [2.0**-e for e in range(6, 11)]

# %% [markdown]
# ## Compatibility norm
#
# `||A_h^{-1/2} P_h A^{1/2}||` stays at one across meshes.

# %%
for h in hs:
    print(f"h={h:g}: {fem.compat_norm(int(round(1 / h)) - 1, 0.5):.12f}")

# %% [markdown]
# ## Error operator
#
# Ratios of the error operator norm to its predicted bound stay bounded.
# Trends are measured along parabolic paths `k ~ h^2`, where the bound is
# a single power of `h`.

# %%
for theta, rho in [(2, 0), (1, 0), (1, 1), (0, 1), (2, -2)]:
    rep = fem.assumption_probe(theta, rho, hs, ks, 1.0)
    print(f"theta={theta} rho={rho}: max ratio {rep.max_ratio:.4f}, path slope {rep.max_path_slope:.4f}, "
          f"marginal h {rep.slope_h:+.4f} k {rep.slope_k:+.4f}")

# %% [markdown]
# ## Discrete smoothing
#
# The ratio of `t_n^rho ||A_h^rho S_{h,k}^n||` to `rho^rho e^{-rho}` stays
# below one for `rho` in `[0, 1]`.

# %%
for rho in (0.25, 0.5, 1.0):
    rep = fem.analytic_probe(rho, hs, ks, 1.0)
    print(f"rho={rho}: max ratio {rep.max_ratio:.4f}, slopes h {rep.slope_h:+.4f} k {rep.slope_k:+.4f}")
