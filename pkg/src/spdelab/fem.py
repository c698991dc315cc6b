"""Piecewise-linear finite elements on a uniform mesh of (0, 1).

FEM vectors are nodal coefficient arrays of length ``M`` (interior nodes); the
H-inner product of two of them is ``c1 @ mass @ c2``.  Spectral vectors are
sine coefficients (see :mod:`spdelab.spectral`).  The cross Gram matrix
``G[j, i] = <e_j, phi_i>`` couples the two.

The discrete operator ``A_h`` is defined by ``<A_h u, v> = <u', v'>``, so its
eigenpairs are the generalized eigenpairs of (stiffness, mass).  On the uniform
mesh the eigenvectors are discrete sines, and ``Z = G V`` (the sine
coefficients of the discrete eigenfunctions) only couples mode ``l`` with its
aliases ``i = P s +- l`` where ``P = 2(M + 1)``.  Sums over all aliases reduce
to Hurwitz zeta values, which gives exact infinite-dimensional norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.special import zeta

from .errors import PreconditionError
from .rates import fit_rate
from .spectral import dirichlet_eigenvalues

__all__ = [
    "FEMSpace",
    "ProbeReport",
    "assemble",
    "discrete_eigenvalues",
    "discrete_eigenvectors",
    "cross_gram",
    "project",
    "step_apply",
    "step_matrix",
    "opnorm_L",
    "hs_norm_q",
    "alias_moment",
    "noise_gram_diag",
    "negnorm_gram_diag",
    "compat_norm",
    "error_opnorm",
    "assumption_probe",
    "analytic_probe",
    "negnorm_probe",
]


def _tridiag(lower, diag, upper, M):
    out = np.zeros((M, M))
    idx = np.arange(M)
    out[idx, idx] = diag
    out[idx[1:], idx[:-1]] = lower
    out[idx[:-1], idx[1:]] = upper
    return out


@dataclass(frozen=True, eq=False)
class FEMSpace:
    """Mass and stiffness matrices for ``M`` interior nodes, ``h = 1/(M+1)``."""

    M: int
    h: float = field(init=False)

    def __post_init__(self):
        if self.M < 1:
            raise PreconditionError("interior node count M must be >= 1")
        object.__setattr__(self, "h", 1.0 / (self.M + 1))

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.M + 1)

    @cached_property
    def mass(self) -> np.ndarray:
        h = self.h
        return _tridiag(h / 6.0, 4.0 * h / 6.0, h / 6.0, self.M)

    @cached_property
    def stiffness(self) -> np.ndarray:
        h = self.h
        return _tridiag(-1.0 / h, 2.0 / h, -1.0 / h, self.M)

    def banded(self, k: float = 0.0) -> np.ndarray:
        """``mass + k * stiffness`` in the (1, 1) banded layout of solve_banded."""
        h, M = self.h, self.M
        ab = np.empty((3, M))
        ab[0] = ab[2] = h / 6.0 - k / h
        ab[1] = 4.0 * h / 6.0 + 2.0 * k / h
        return ab

    def mass_apply(self, c: np.ndarray) -> np.ndarray:
        """``mass @ c`` along the last axis, O(M)."""
        c = np.asarray(c, dtype=float)
        out = (4.0 * self.h / 6.0) * c
        out[..., 1:] += (self.h / 6.0) * c[..., :-1]
        out[..., :-1] += (self.h / 6.0) * c[..., 1:]
        return out

    def norm(self, c: np.ndarray) -> np.ndarray:
        """H-norm of FEM coefficient vectors (last axis)."""
        c = np.asarray(c, dtype=float)
        return np.sqrt(np.sum(c * self.mass_apply(c), axis=-1))

    @cached_property
    def _eig(self):
        mu, V = sla.eigh(self.stiffness, self.mass)
        return mu, V

    @property
    def eigenvalues(self) -> np.ndarray:
        """``mu_l`` of ``A_h`` from the generalized eigensolver."""
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        """Mass-orthonormal eigenvectors as columns."""
        return self._eig[1]

    def frac_power(self, rho: float) -> np.ndarray:
        """Nodal matrix of ``A_h^rho`` (acting on coefficient vectors)."""
        mu, V = self._eig
        return (V * mu**rho) @ V.T @ self.mass


def assemble(M: int) -> FEMSpace:
    """Assemble the uniform-mesh operators; the eigensystem is built lazily."""
    return FEMSpace(M)


def discrete_eigenvalues(M: int) -> np.ndarray:
    """Closed form ``(6/h^2)(1 - cos l pi h)/(2 + cos l pi h)``."""
    h = 1.0 / (M + 1)
    th = np.pi * h * np.arange(1, M + 1)
    return 6.0 / h**2 * (1.0 - np.cos(th)) / (2.0 + np.cos(th))


def discrete_eigenvectors(M: int) -> np.ndarray:
    """Closed-form mass-orthonormal eigenvectors (discrete sines)."""
    h = 1.0 / (M + 1)
    m = np.arange(1, M + 1)
    th = np.pi * h * m
    S = np.sin(np.outer(m, th))
    return S / np.sqrt((2.0 + np.cos(th)) / 6.0)


def cross_gram(J: int, M: int) -> np.ndarray:
    """``G[j-1, i-1] = int e_j phi_i`` for sine modes ``j <= J`` against hats."""
    h = 1.0 / (M + 1)
    j = np.arange(1, J + 1, dtype=float)[:, None]
    x = h * np.arange(1, M + 1)[None, :]
    w = j * np.pi
    return np.sqrt(2.0) * np.sin(w * x) * 2.0 * (1.0 - np.cos(w * h)) / (w**2 * h)


def project(ops: FEMSpace, gram: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Orthogonal projection ``P_h`` of spectral coefficients onto ``V_h``.

    Solves ``mass @ c = G.T @ x`` (batched over leading axes of ``x``).
    """
    x = np.asarray(x, dtype=float)
    if gram.shape != (x.shape[-1], ops.M):
        raise PreconditionError(
            f"gram has shape {gram.shape}, expected ({x.shape[-1]}, {ops.M})"
        )
    rhs = x @ gram
    c = sla.solve_banded((1, 1), ops.banded(0.0), rhs.T)
    return c.T


def step_apply(ops: FEMSpace, k: float, c: np.ndarray, load=None) -> np.ndarray:
    """One backward Euler step ``(mass + k K) c' = mass c + load``."""
    if k <= 0:
        raise PreconditionError("step size k must be > 0")
    c = np.asarray(c, dtype=float)
    rhs = ops.mass_apply(c)
    if load is not None:
        rhs = rhs + load
    return sla.solve_banded((1, 1), ops.banded(k), rhs.T).T


def step_matrix(ops: FEMSpace, k: float, n: int = 1) -> np.ndarray:
    """Nodal matrix of ``S_{h,k}^n`` restricted to ``V_h`` (solve path)."""
    out = np.eye(ops.M)
    for _ in range(n):
        out = step_apply(ops, k, out.T).T
    return out


def opnorm_L(op: np.ndarray, ops: FEMSpace | None = None, source_gram=None) -> float:
    """H-operator norm of a coefficient-space matrix.

    ``op`` maps source coefficients to FEM coefficients of ``ops`` (image
    measured with the mass matrix; Euclidean if ``ops`` is None).  The source
    Gram defaults to the same mass matrix; pass an identity (or any SPD
    matrix) for spectral or other sources.  Returns the square root of the top
    generalized eigenvalue of ``(op.T @ mass @ op, source_gram)``.
    """
    op = np.atleast_2d(np.asarray(op, dtype=float))
    out_gram = np.eye(op.shape[0]) if ops is None else ops.mass
    if source_gram is None:
        source_gram = out_gram if ops is not None and op.shape[1] == ops.M else np.eye(op.shape[1])
    a = op.T @ out_gram @ op
    a = 0.5 * (a + a.T)
    try:
        top = sla.eigh(a, source_gram, eigvals_only=True, subset_by_index=[a.shape[0] - 1] * 2)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError(f"generalized eigensolver failed: {exc}") from exc
    return float(np.sqrt(max(top[-1], 0.0)))


def hs_norm_q(op: np.ndarray, noise, ops: FEMSpace | None = None, warn=True) -> float:
    """``(sum_j q_j ||op e_j||^2)^(1/2)`` for an operator with spectral inputs.

    ``op`` has one column per spectral mode ``j <= J``; images are FEM vectors
    of ``ops`` (mass norm) or spectral vectors when ``ops`` is None.
    """
    op = np.atleast_2d(np.asarray(op, dtype=float))
    J = op.shape[1]
    q = noise.weights_for(J)
    if ops is None:
        col = np.sum(op**2, axis=0)
    else:
        col = np.sum(op * ops.mass_apply(op.T).T, axis=0)
    value = float(np.sqrt(np.sum(q * col)))
    if warn and value > 0 and q[-1] * col[-1] * J > 1e-6 * value**2:
        import warnings

        warnings.warn(
            f"HS norm truncated at J={J}; tail estimate {q[-1] * col[-1] * J:.2e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return value


# ---- exact alias sums ------------------------------------------------------


def alias_moment(M: int, p: float) -> np.ndarray:
    """``sum_i i^{-p} Z_{il}^2`` over all aliases ``i`` of each mode ``l``.

    Uses ``Z_{il}^2 = 12 (1 - cos t)^2 / ((i pi h)^4 (2 + cos t))`` with
    ``t = l pi h`` on every alias and Hurwitz zeta for the alias sums.
    """
    h = 1.0 / (M + 1)
    P = 2 * (M + 1)
    l = np.arange(1, M + 1)
    th = np.pi * h * l
    c = 12.0 * (1.0 - np.cos(th)) ** 2 / (np.pi**4 * h**4 * (2.0 + np.cos(th)))
    s = 4.0 + p
    a = l / P
    return c * P**-s * (zeta(s, a) + zeta(s, 1.0 - a))


def alias_table(M: int, aliases: int):
    """Explicit alias indices and ``Z^2`` values.

    Returns ``(i, z2)`` of shape ``(M, 2 * aliases)``: for each mode ``l`` the
    first ``aliases`` entries of both families ``P s + l`` (s >= 0) and
    ``P s - l`` (s >= 1).
    """
    h = 1.0 / (M + 1)
    P = 2 * (M + 1)
    l = np.arange(1, M + 1)[:, None]
    s = np.arange(aliases)[None, :]
    i = np.concatenate([P * s + l, P * (s + 1) - l], axis=1).astype(float)
    th = np.pi * h * l
    z2 = 12.0 * (1.0 - np.cos(th)) ** 2 / ((i * np.pi * h) ** 4 * (2.0 + np.cos(th)))
    return i, z2


def alias_tail(M: int, p: float, aliases: int) -> np.ndarray:
    """Remainder of :func:`alias_moment` beyond the first ``aliases`` per family."""
    h = 1.0 / (M + 1)
    P = 2 * (M + 1)
    l = np.arange(1, M + 1)
    th = np.pi * h * l
    c = 12.0 * (1.0 - np.cos(th)) ** 2 / (np.pi**4 * h**4 * (2.0 + np.cos(th)))
    s = 4.0 + p
    a = l / P
    return c * P**-s * (zeta(s, aliases + a) + zeta(s, aliases + 1.0 - a))


def noise_gram_diag(M: int, alpha: float) -> np.ndarray:
    """Diagonal of ``Z.T diag(q) Z`` summed over all noise modes."""
    return alias_moment(M, alpha)


def negnorm_gram_diag(M: int, gamma: float) -> np.ndarray:
    """``<A^{-gamma} v_l, v_l>`` for the discrete eigenfunctions (exact)."""
    return np.pi ** (-2.0 * gamma) * alias_moment(M, 2.0 * gamma)


def compat_norm(M: int, rho: float = 0.5, J: int | None = None) -> float:
    """``||A_h^{-rho} P_h A^rho||`` on H.

    With ``J`` given the input space is cut to ``J`` sine modes and the norm is
    the top singular value of the explicit matrix; otherwise the alias
    structure makes ``B B^T`` diagonal and the exact norm is returned.
    """
    if not 0 <= rho <= 0.5:
        raise PreconditionError("compatibility exponent rho must lie in [0, 1/2]")
    mu = discrete_eigenvalues(M)
    if J is None:
        d = np.pi ** (4.0 * rho) * alias_moment(M, -4.0 * rho) / mu ** (2.0 * rho)
        return float(np.sqrt(d.max()))
    ops = assemble(M)
    Z = cross_gram(J, M) @ ops.eigenvectors
    lam = dirichlet_eigenvalues(J)
    B = (Z * lam[:, None] ** rho).T / ops.eigenvalues[:, None] ** rho
    return float(np.linalg.norm(B, 2))


# ---- error operators -------------------------------------------------------


def _check_probe_range(theta, rho):
    if not 0 <= theta <= 2:
        raise PreconditionError("theta must lie in [0, 2] (error-operator assumption)")
    if not -theta <= rho <= min(1.0, 2.0 - theta):
        raise PreconditionError(
            f"rho must lie in [-theta, min(1, 2 - theta)] = [{-theta:g}, {min(1.0, 2.0 - theta):g}]"
        )


class _ErrorContext:
    """Cached spectral/FEM coupling for error-operator norms at one mesh."""

    def __init__(self, M: int, J: int | None = None):
        self.ops = assemble(M)
        self.J = 4 * M if J is None else J
        self.lam = dirichlet_eigenvalues(self.J)
        self.mu = self.ops.eigenvalues
        self.Z = cross_gram(self.J, M) @ self.ops.eigenvectors

    def norm(self, t, r_pow, in_weight, out_gamma=0.0):
        """``||A^{-g/2} (S(t) - sum_l r_pow_l v_l Z_l^T) diag(in_weight)||``.

        The image is written in the frame ``(e_1..e_J, v_1..v_M)`` whose
        weighted Gram matrix is exact.
        """
        lam, Z = self.lam, self.Z
        wout = lam ** (-out_gamma)
        d = np.exp(-lam * t) * in_weight
        B = (r_pow[:, None] * Z.T) * in_weight[None, :]
        gvv = negnorm_gram_diag(self.ops.M, out_gamma) if out_gamma else np.ones(self.ops.M)
        C = (wout[:, None] * Z) @ B
        G = np.diag(wout * d**2) - d[:, None] * C - C.T * d[None, :] + B.T @ (gvv[:, None] * B)
        G = 0.5 * (G + G.T)
        top = sla.eigh(G, eigvals_only=True, subset_by_index=[G.shape[0] - 1] * 2)
        return float(np.sqrt(max(top[-1], 0.0)))


def error_opnorm(M: int, k: float, n: int, rho: float = 0.0, J: int | None = None) -> float:
    """``||E_{h,k}^n A^{rho/2}||`` with ``E^n = S(nk) - S_{h,k}^n``."""
    ctx = _ErrorContext(M, J)
    r = 1.0 / (1.0 + k * ctx.mu)
    return ctx.norm(n * k, r**n, ctx.lam ** (rho / 2.0))


@dataclass
class ProbeReport:
    """Rows of a probe sweep with the worst ratio and its log-log trends.

    ``slope_h`` fits ``log max_{k,n} ratio`` against ``log h`` and
    ``slope_k`` fits ``log max_{h,n} ratio`` against ``log k``.
    ``path_slopes`` maps ``c = k/h^2`` to the slope of ``log max_n ratio``
    against ``log h`` along the parabolic path ``k = c h^2`` (paths with at
    least three grid cells).  Along such a path the bound is a single power
    of ``h``, so a non-zero slope there is growth rather than the crossover
    between the spatial and temporal terms of the bound.
    """

    rows: list
    max_ratio: float
    slope_h: float
    slope_k: float
    path_slopes: dict = field(default_factory=dict)

    columns = ("theta", "rho", "h", "k", "n", "t_n", "norm", "bound", "ratio")

    @property
    def max_path_slope(self) -> float:
        if not self.path_slopes:
            return math.nan
        return max(abs(v) for v in self.path_slopes.values())

    @property
    def max_path_growth(self) -> float:
        """Largest growth rate ``-slope`` under refinement along a path."""
        if not self.path_slopes:
            return math.nan
        return max(-v for v in self.path_slopes.values())


def _cell_max(rows):
    cells = {}
    for r in rows:
        key = (r["h"], r["k"])
        cells[key] = max(cells.get(key, 0.0), r["ratio"])
    return cells


def _trend(rows, key, value="ratio"):
    groups = {}
    for r in rows:
        groups[r[key]] = max(groups.get(r[key], 0.0), r[value])
    xs = sorted(groups)
    if len(xs) < 3:
        return math.nan
    return fit_rate(xs, [groups[x] for x in xs], kind=key).slope


def _path_trends(rows):
    paths = {}
    for (h, k), v in _cell_max(rows).items():
        c = round(k / h**2, 9)
        paths.setdefault(c, []).append((h, v))
    out = {}
    for c, pts in sorted(paths.items()):
        if len(pts) >= 3:
            pts.sort()
            out[c] = fit_rate([p[0] for p in pts], [p[1] for p in pts], kind="h").slope
    return out


def _report(rows):
    return ProbeReport(rows, max(r["ratio"] for r in rows), _trend(rows, "h"),
                       _trend(rows, "k"), _path_trends(rows))


def _n_grid(N, n_grid):
    if n_grid == "final":
        return [N]
    if n_grid is None:
        n = sorted({1, N} | {2**e for e in range(int(math.log2(N)) + 1)})
        return [m for m in n if m <= N]
    return [m for m in n_grid if 1 <= m <= N]


def assumption_probe(theta, rho, hs, ks, T=1.0, n_grid=None, J_factor=4) -> ProbeReport:
    """Ratios ``||E^n A^{rho/2}|| / ((h^theta + k^{theta/2}) t_n^{-(theta+rho)/2})``.

    ``hs`` must be of the form ``1/(M+1)``; ``n_grid`` defaults to the dyadic
    indices up to ``N = T/k`` (the last index ``N`` always included).
    """
    _check_probe_range(theta, rho)
    rows = []
    for h in hs:
        M = int(round(1.0 / h)) - 1
        ctx = _ErrorContext(M, J_factor * M)
        tail_w = ctx.lam[-1] ** (rho / 2.0)
        for k in ks:
            N = int(math.floor(T / k + 1e-12))
            r = 1.0 / (1.0 + k * ctx.mu)
            for n in _n_grid(N, n_grid):
                t = n * k
                if math.exp(-ctx.lam[-1] * t) * tail_w > 1e-12:
                    raise PreconditionError(
                        f"spectral truncation J={ctx.J} too small for t={t:g}"
                    )
                val = ctx.norm(t, r**n, ctx.lam ** (rho / 2.0))
                bound = (h**theta + k ** (theta / 2.0)) * t ** (-(theta + rho) / 2.0)
                rows.append(dict(theta=theta, rho=rho, h=h, k=k, n=n, t_n=t,
                                 norm=val, bound=bound, ratio=val / bound))
    return _report(rows)


def analytic_probe(rho, hs, ks, T=1.0) -> ProbeReport:
    """Discrete smoothing ``t_n^rho ||A_h^rho S_{h,k}^n||`` over all ``n <= N``.

    ``A_h^rho S_{h,k}^n`` is diagonal in the discrete eigenbasis, so the norm
    is ``max_l mu_l^rho (1 + k mu_l)^{-n}``.  ``bound`` is ``t_n^{-rho}``.
    """
    if not 0 <= rho <= 1:
        raise PreconditionError("smoothing exponent rho must lie in [0, 1]")
    rows = []
    for h in hs:
        M = int(round(1.0 / h)) - 1
        mu = discrete_eigenvalues(M)
        for k in ks:
            N = int(math.floor(T / k + 1e-12))
            n = np.arange(1, N + 1)
            logv = rho * np.log(mu)[None, :] - n[:, None] * np.log1p(k * mu)[None, :]
            norm = np.exp(logv.max(axis=1))
            t = n * k
            ratio = norm * t**rho
            i = int(np.argmax(ratio))
            rows.append(dict(theta=0.0, rho=rho, h=h, k=k, n=int(n[i]), t_n=float(t[i]),
                             norm=float(norm[i]), bound=float(t[i] ** -rho), ratio=float(ratio[i])))
    return _report(rows)


def negnorm_probe(gamma, beta, hs, ks, t_grid=None, T=1.0, J_factor=4) -> ProbeReport:
    """Ratios ``||A^{-g/2} E~(t) A^{(1-b)/2}|| / ((h^{2g} + k^g) t^{(-1+b-g)/2})``.

    ``E~(t) = S(t) - S_{h,k}^{j+1}`` for ``t`` in ``(t_j, t_{j+1})``; a grid
    point ``t = t_j`` takes the right limit, i.e. interval index ``j``.
    """
    if not 0 < gamma < beta:
        raise PreconditionError("gamma must be in (0, beta)")
    if not beta <= 1:
        raise PreconditionError("beta must be <= 1")
    if t_grid is None:
        t_grid = [T * 2.0**-e for e in range(0, 7)]
    rows = []
    for h in hs:
        M = int(round(1.0 / h)) - 1
        ctx = _ErrorContext(M, J_factor * M)
        w_in = ctx.lam ** ((1.0 - beta) / 2.0)
        for k in ks:
            r = 1.0 / (1.0 + k * ctx.mu)
            for t in t_grid:
                j = int(math.floor(t / k + 1e-12))
                val = ctx.norm(t, r ** (j + 1), w_in, out_gamma=gamma)
                bound = (h ** (2 * gamma) + k**gamma) * t ** ((-1.0 + beta - gamma) / 2.0)
                rows.append(dict(theta=gamma, rho=beta, h=h, k=k, n=j + 1, t_n=t,
                                 norm=val, bound=bound, ratio=val / bound))
    return _report(rows)
