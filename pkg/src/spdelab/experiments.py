"""Convergence experiments: exact (MC-free) error formulas, Monte Carlo
strong/weak errors with common random numbers, the Gronwall utility and the
Markov-semigroup Hoelder probe.

Tables are lists of dicts with the columns of :data:`COLUMNS`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from . import fem
from .dynamics import (FEMBackend, SchemeConfig, SpectralBackend, dyadic_checkpoints,
                       second_moment_linear, simulate_samples, get_drift)
from .errors import PreconditionError
from .noise import IncrementStream, NoiseModel
from .rates import RateFit, fit_rate, spearman

__all__ = [
    "COLUMNS",
    "make_row",
    "FunctionalSpec",
    "convolution_error_sq",
    "negnorm_error_exact",
    "strong_error_exact",
    "weak_error_exact_quadratic",
    "strong_error",
    "weak_error_mc",
    "fit_table",
    "fit_rate",
    "RateFit",
    "GronwallVerdict",
    "gronwall_check",
    "gronwall_sequence",
    "markov_holder_exact",
    "markov_holder_mc",
    "markov_holder_probe",
    "INCONCLUSIVE_SE",
    "monotone_trend",
]

COLUMNS = ["experiment", "backend", "alpha", "beta", "gamma", "functional", "h", "k", "N",
           "samples", "value", "stderr", "flag"]

INCONCLUSIVE_SE = 0.3


def make_row(experiment, backend="", alpha=0.0, beta=math.nan, gamma=math.nan, functional="",
             h=math.nan, k=math.nan, N=0, samples=0, value=math.nan, stderr=0.0, flag="ok"):
    return dict(experiment=experiment, backend=backend, alpha=float(alpha), beta=float(beta),
                gamma=float(gamma), functional=functional, h=float(h), k=float(k), N=int(N),
                samples=int(samples), value=float(value), stderr=float(stderr), flag=flag)


def _flag(value, stderr):
    if stderr > INCONCLUSIVE_SE * abs(value):
        return "inconclusive"
    return "ok"


# ---- test functionals ------------------------------------------------------


@dataclass(frozen=True)
class FunctionalSpec:
    """Test function ``phi: H -> R`` of polynomial growth ``degree``.

    Tags: ``linear`` (``<x, psi>``), ``squared-norm``, ``norm-power``
    (``||x||^{2m}``) and ``smoothed-exponential`` (``exp(-||x||^2)``).
    ``psi`` is given in sine coefficients.
    """

    tag: str = "squared-norm"
    psi: tuple = (1.0,)
    m: int = 1

    def __post_init__(self):
        if self.tag not in ("linear", "squared-norm", "norm-power", "smoothed-exponential"):
            raise PreconditionError(f"unknown functional {self.tag!r}")
        if self.tag == "norm-power" and self.m < 1:
            raise PreconditionError("norm-power needs m >= 1")

    @property
    def degree(self) -> int:
        return {"linear": 1, "squared-norm": 2, "norm-power": 2 * self.m,
                "smoothed-exponential": 0}[self.tag]

    def _sq(self, backend, states):
        return backend.norm(states) ** 2

    def evaluate(self, backend, states):
        """``phi`` on states of ``backend`` (any leading shape)."""
        if self.tag == "linear":
            return backend.spectral_inner(states, np.asarray(self.psi, dtype=float))
        sq = self._sq(backend, states)
        if self.tag == "squared-norm":
            return sq
        if self.tag == "norm-power":
            return sq**self.m
        return np.exp(-sq)

    def evaluate_coeffs(self, x):
        """``phi`` on sine coefficients (last axis)."""
        x = np.asarray(x, dtype=float)
        if self.tag == "linear":
            psi = np.asarray(self.psi, dtype=float)
            n = min(psi.size, x.shape[-1])
            return x[..., :n] @ psi[:n]
        sq = np.sum(x**2, axis=-1)
        return {"squared-norm": sq, "norm-power": sq**self.m,
                "smoothed-exponential": np.exp(-sq)}[self.tag]

    def derivative_norms(self, x):
        """``||phi^{(j)}(x)||`` for ``j = 0, 1, 2`` (operator norms)."""
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x**2, axis=-1))
        if self.tag == "linear":
            p = np.linalg.norm(self.psi)
            return np.abs(self.evaluate_coeffs(x)), np.full_like(r, p), np.zeros_like(r)
        if self.tag == "squared-norm":
            return r**2, 2 * r, np.full_like(r, 2.0)
        if self.tag == "norm-power":
            m = self.m
            d2 = 2 * m * r ** (2 * m - 2) + (4 * m * (m - 1) * r ** (2 * m - 2) if m > 1 else 0)
            return r ** (2 * m), 2 * m * r ** (2 * m - 1), d2
        e = np.exp(-(r**2))
        return e, 2 * r * e, np.maximum(2 * e, np.abs(4 * r**2 - 2) * e)

    def check_growth(self, samples=200, seed=0, scale=10.0, C=None) -> bool:
        """``||phi^{(j)}(x)|| <= C (1 + ||x||^{m - j})`` on random states."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(samples, 8)) * rng.uniform(0, scale, size=(samples, 1))
        r = np.linalg.norm(x, axis=1)
        m = self.degree
        C = (1.0 + 4.0 * max(1, m) ** 2 + np.linalg.norm(self.psi)) if C is None else C
        for j, d in enumerate(self.derivative_norms(x)):
            bound = C * (1.0 + r ** max(m - j, 0))
            if np.any(d > bound * (1 + 1e-12)):
                return False
        return True


# ---- exact convolution errors ----------------------------------------------


def _cutoff(k, t):
    """Smallest mode index with ``lam k >= 40`` and ``lam t >= 40``."""
    return int(math.ceil(math.sqrt(40.0 / min(k, t)) / math.pi)) + 1


def _exact_variance(alpha, gamma, t, J):
    """``sum_i q_i lam_i^{-gamma} (1 - e^{-2 lam_i t}) / (2 lam_i)`` (all modes)."""
    i = np.arange(1, J + 1, dtype=float)
    lam = (i * np.pi) ** 2
    head = np.sum(i**-alpha * lam**-gamma * -np.expm1(-2.0 * lam * t) / (2.0 * lam))
    return head + np.pi ** (-2 * gamma - 2) * zeta(alpha + 2 * gamma + 2, J + 1) / 2.0


def _cross(lam, r, k, N):
    """``int_0^{t_N} e^{-lam s} r^{j(s)+1} ds`` with ``j(s) = floor(s/k)``."""
    e = np.exp(-lam * k)
    rho = r * e
    with np.errstate(divide="ignore"):
        geo = -np.expm1(N * np.log(rho))
    return r * -np.expm1(-lam * k) / lam * geo / (1.0 - rho)


def _kfac(r, k, N):
    """``k sum_{m=1}^N r^{2m}``."""
    r2 = r * r
    return k * r2 * -np.expm1(N * np.log(r2)) / (1.0 - r2)


def _series_tail(alpha, gamma, k, J):
    """``sum_{i>J} q_i lam_i^{-gamma} (-2 C_i + K_i)`` for ``k lam > 2``, as a zeta series."""
    total, n = 0.0, 0
    while True:
        c = (-1) ** n * (2**n - 2) * k ** (-1 - n) * np.pi ** (-2 * gamma - 4 - 2 * n)
        term = c * zeta(alpha + 2 * gamma + 4 + 2 * n, J + 1)
        total += term
        if (n > 1 and abs(term) <= 1e-17 * abs(total)) or n > 200:
            return total
        n += 1


def convolution_error_sq(backend, alpha, gamma, k, N):
    """``E||W^A(t_N) - W_{h,k}^N||^2_{-gamma}`` exactly.

    ``backend`` is ``("spectral", None)`` for the untruncated spectral
    Galerkin space (pure time error) or ``("fem", M)``.  The sum over noise
    modes is infinite and evaluated in closed form: explicit modes up to the
    point where ``lam k >= 40``, then zeta-function tails.
    """
    kind, size = backend
    t = N * k
    J = _cutoff(k, t)
    exact = _exact_variance(alpha, gamma, t, J)
    if kind == "spectral":
        i = np.arange(1, J + 1, dtype=float)
        lam = (i * np.pi) ** 2
        r = 1.0 / (1.0 + k * lam)
        w = i**-alpha * lam**-gamma
        val = exact + np.sum(w * (_kfac(r, k, N) - 2.0 * _cross(lam, r, k, N)))
        return float(val + _series_tail(alpha, gamma, k, J))
    if kind != "fem":
        raise PreconditionError(f"unknown backend {kind!r}")
    M = int(size)
    P = 2 * (M + 1)
    mu = fem.discrete_eigenvalues(M)
    r = 1.0 / (1.0 + k * mu)
    S = max(2, int(math.ceil(math.sqrt(40.0 / k) / (P * math.pi))) + 1)
    i, z2 = fem.alias_table(M, S)
    lam = (i * np.pi) ** 2
    cross = np.sum(i**-alpha * lam**-gamma * z2 * _cross(lam, r[:, None], k, N))
    # beyond the explicit aliases lam k >= 40 and the cross factor is r / lam
    cross += np.sum(r * np.pi ** (-2 * gamma - 2) * fem.alias_tail(M, alpha + 2 * gamma + 2, S))
    W = fem.alias_moment(M, alpha)
    Gm = fem.negnorm_gram_diag(M, gamma) if gamma else np.ones(M)
    return float(exact - 2.0 * cross + np.sum(W * Gm * _kfac(r, k, N)))


def _grid_cells(hs, ks):
    hs = [None] if hs is None else list(hs)
    ks = list(ks)
    if not ks or not hs:
        raise PreconditionError("grids must be nonempty")
    return [(h, k) for h in hs for k in ks]


def _mesh_size(h):
    M = int(round(1.0 / h)) - 1
    if M < 1 or abs((M + 1) * h - 1.0) > 1e-9:
        raise PreconditionError(f"h={h} must be 1/(M+1) for an integer M >= 1")
    return M


def negnorm_error_exact(gamma, alpha, hs, ks, T=1.0, beta=None):
    """``||W^A(t_N) - W^N_{h,k}||_{L^2(Omega, H^{-gamma})}`` on an ``(h, k)`` grid.

    ``hs=None`` uses the untruncated spectral space.  ``gamma`` must satisfy
    ``0 <= gamma < beta`` (default ``beta`` = the admissible maximum for ``alpha``).
    """
    noise = NoiseModel(alpha, 1)
    beta = noise.beta_max if beta is None else beta
    if beta > noise.beta_max + 1e-12:
        raise PreconditionError(f"beta={beta} exceeds the admissible regularity {noise.beta_max}")
    if not 0 <= gamma < beta:
        raise PreconditionError(f"gamma must satisfy 0 <= gamma < beta = {beta}")
    rows = []
    for h, k in _grid_cells(hs, ks):
        cfg = SchemeConfig(T=T, k=k)
        be = ("spectral", None) if h is None else ("fem", _mesh_size(h))
        v = math.sqrt(max(convolution_error_sq(be, alpha, gamma, cfg.k, cfg.N), 0.0))
        rows.append(make_row("negnorm-exact", be[0], alpha, beta, gamma, "", 0.0 if h is None else h,
                             cfg.k, cfg.N, 0, v))
    return rows


def strong_error_exact(alpha, hs, ks, T=1.0):
    """Exact strong error of the linear equation with ``X0 = 0`` (``gamma = 0``)."""
    rows = negnorm_error_exact(0.0, alpha, hs, ks, T)
    for r in rows:
        r["experiment"] = "strong-exact"
    return rows


def weak_error_exact_quadratic(alpha, hs, ks, T=1.0, x0=None, J=64):
    """``|E||X(t_N)||^2 - E||X^N_{h,k}||^2|`` for ``F = 0`` without sampling.

    ``hs=None`` uses the (untruncated) spectral backend; otherwise FEM.
    """
    noise = NoiseModel(alpha, J)
    rows = []
    for h, k in _grid_cells(hs, ks):
        cfg = SchemeConfig(T=T, k=k, x0=x0)
        be = SpectralBackend(J) if h is None else FEMBackend(_mesh_size(h), J)
        sm = second_moment_linear(be, noise, cfg)
        rows.append(make_row("weak-exact", be.kind, alpha, noise.beta_max, math.nan,
                             "squared-norm", 0.0 if h is None else h, cfg.k, cfg.N, 0,
                             abs(sm.exact - sm.discrete)))
    return rows


def fit_table(rows, kind):
    """Rate fit over ``rows`` against the ``h`` or ``k`` column."""
    return fit_rate([r[kind] for r in rows], [r["value"] for r in rows], kind=kind)


# ---- Monte Carlo errors ---------------------------------------------------


@dataclass
class _Reference:
    backend: object
    config: SchemeConfig
    states: np.ndarray
    checkpoints: list


def _reference(drift, noise, T, J_ref, N_ref, seed, samples, levels, workers, x0):
    cfg = SchemeConfig(T=T, N=N_ref, x0=x0)
    be = SpectralBackend(J_ref)
    stream = IncrementStream(noise, seed, N_ref, T)
    cps = dyadic_checkpoints(N_ref, levels)
    st = simulate_samples(be, drift, cfg, stream, np.arange(samples), cps, workers=workers)
    return _Reference(be, cfg, st, cps), stream


def _coarse(drift, stream, h, N, T, x0, samples, levels, workers):
    if stream.fine_steps % N:
        raise PreconditionError(f"reference N={stream.fine_steps} does not refine tested N={N}")
    cfg = SchemeConfig(T=T, N=N, x0=x0)
    be = SpectralBackend(stream.noise.modes) if h is None else FEMBackend(_mesh_size(h), stream.noise.modes)
    cps = dyadic_checkpoints(N, levels)
    st = simulate_samples(be, drift, cfg, stream, np.arange(samples), cps, workers=workers)
    return be, cfg, st


def _mc_cells(hs, Ns, N_ref):
    cells = []
    for h in ([None] if hs is None else hs):
        for N in Ns:
            if N_ref % N:
                raise PreconditionError(f"reference N={N_ref} does not refine tested N={N}")
            cells.append((h, N))
    return cells


def strong_error(drift, noise, hs, Ns, samples, seed, T=1.0, J_ref=None, N_ref=4096,
                 levels=3, workers=None, x0=None):
    """``max_n (E||X_ref(t_n) - X^n_{h,k}||^2)^{1/2}`` over dyadic checkpoints.

    The reference is the spectral backend at ``(J_ref, N_ref)`` on the same
    increments; coarse runs use the spectral backend (``hs=None``) or FEM.
    The standard error is propagated by the delta method to the square root.
    """
    drift = get_drift(drift) if isinstance(drift, str) else drift
    J_ref = noise.modes if J_ref is None else J_ref
    if J_ref < noise.modes:
        raise PreconditionError("reference must resolve every noise mode")
    cells = _mc_cells(hs, Ns, N_ref)
    ref, stream = _reference(drift, noise, T, J_ref, N_ref, seed, samples, levels, workers, x0)
    rows = []
    for h, N in cells:
        be, cfg, st = _coarse(drift, stream, h, N, T, x0, samples, levels, workers)
        best = (-1.0, 0.0)
        for c, n in enumerate(dyadic_checkpoints(N, levels)):
            xr = ref.states[:, ref.checkpoints.index(n * (N_ref // N))]
            xc = st[:, c]
            if be.kind == "spectral":
                d = np.zeros((samples, max(xr.shape[1], xc.shape[1])))
                d[:, : xr.shape[1]] += xr
                d[:, : xc.shape[1]] -= xc
                e2 = np.sum(d**2, axis=1)
            else:
                e2 = np.sum(xr**2, axis=1) - 2 * be.spectral_inner(xc, xr) + be.norm(xc) ** 2
                e2 = np.maximum(e2, 0.0)
            m = float(e2.mean())
            se = float(e2.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
            if m > best[0]:
                best = (m, se)
        val = math.sqrt(best[0])
        se = best[1] / (2 * val) if val > 0 else 0.0
        rows.append(make_row("strong-mc", be.kind, noise.alpha, noise.beta_max, math.nan, "",
                             0.0 if h is None else h, cfg.k, N, samples, val, se, _flag(val, se)))
    return rows


def weak_error_mc(functional: FunctionalSpec, drift, noise, hs, Ns, samples, seed, T=1.0,
                  J_ref=None, N_ref=4096, levels=3, workers=None, x0=None):
    """``max_n |E[phi(X_ref(t_n)) - phi(X^n_{h,k})]|`` estimated on coupled draws.

    Rows whose standard error exceeds 30% of the estimate are flagged
    ``inconclusive``.
    """
    drift = get_drift(drift) if isinstance(drift, str) else drift
    J_ref = noise.modes if J_ref is None else J_ref
    cells = _mc_cells(hs, Ns, N_ref)
    ref, stream = _reference(drift, noise, T, J_ref, N_ref, seed, samples, levels, workers, x0)
    rows = []
    for h, N in cells:
        be, cfg, st = _coarse(drift, stream, h, N, T, x0, samples, levels, workers)
        best = (-1.0, 0.0)
        for c, n in enumerate(dyadic_checkpoints(N, levels)):
            xr = ref.states[:, ref.checkpoints.index(n * (N_ref // N))]
            d = functional.evaluate(ref.backend, xr) - functional.evaluate(be, st[:, c])
            m = abs(float(d.mean()))
            se = float(d.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
            if m > best[0]:
                best = (m, se)
        rows.append(make_row("weak-mc", be.kind, noise.alpha, noise.beta_max, math.nan,
                             functional.tag, 0.0 if h is None else h, cfg.k, N, samples,
                             best[0], best[1], _flag(*best)))
    return rows


# ---- Gronwall --------------------------------------------------------------


@dataclass(frozen=True)
class GronwallVerdict:
    hypothesis_holds: bool
    constant: float
    first_failure: int | None = None
    ratios: np.ndarray = field(default=None, repr=False)


def _kernel_sum(phi, t, k, nu):
    """``k sum_{j<n} t_{n-j}^{-1+nu} phi_j`` for every ``n``."""
    N = phi.size
    w = np.zeros(N)
    w[1:] = t[1:] ** (-1.0 + nu)
    return k * np.array([np.dot(w[n:0:-1], phi[:n]) for n in range(N)])


def gronwall_check(phi, C1, C2, mu, nu, k) -> GronwallVerdict:
    """Check the discrete Gronwall hypothesis and report the conclusion constant.

    Hypothesis: ``phi_n <= C1 (1 + t_n^{-1+mu}) + C2 k sum_{j<n} t_{n-j}^{-1+nu} phi_j``
    for ``n >= 1``.  The reported constant is the smallest ``C`` with
    ``phi_n <= C C1 (1 + t_n^{-1+mu})``.
    """
    phi = np.asarray(phi, dtype=float)
    if not (mu > 0 and nu > 0):
        raise PreconditionError("mu and nu must be positive")
    if np.any(phi < 0):
        raise PreconditionError("sequence must be nonnegative")
    N = phi.size
    t = k * np.arange(N)
    base = np.empty(N)
    base[0] = math.inf
    base[1:] = C1 * (1.0 + t[1:] ** (-1.0 + mu))
    rhs = base + C2 * _kernel_sum(phi, t, k, nu)
    bad = np.nonzero(phi[1:] > rhs[1:] * (1 + 1e-12) + 1e-300)[0]
    ratios = np.where(base[1:] > 0, phi[1:] / base[1:], 0.0)
    C = float(ratios.max()) if ratios.size else 0.0
    if bad.size:
        return GronwallVerdict(False, C, int(bad[0]) + 1, ratios)
    return GronwallVerdict(True, C, None, ratios)


def gronwall_sequence(C1, C2, mu, nu, k, N):
    """Sequence attaining the Gronwall hypothesis with equality (``phi_0 = 0``)."""
    t = k * np.arange(N + 1)
    phi = np.zeros(N + 1)
    w = np.zeros(N + 1)
    w[1:] = t[1:] ** (-1.0 + nu)
    for n in range(1, N + 1):
        phi[n] = C1 * (1 + t[n] ** (-1 + mu)) + C2 * k * np.dot(w[n:0:-1], phi[:n])
    return phi


# ---- Markov semigroup Hoelder probe ----------------------------------------


def _exact_second_moment(alpha, t, x0):
    if t == 0:
        return float(np.sum(np.asarray(x0, float) ** 2))
    J = max(_cutoff(t, t), len(x0))
    lam = (np.arange(1, J + 1) * np.pi) ** 2
    x = np.zeros(J)
    x[: len(x0)] = x0
    return float(np.sum(np.exp(-2 * lam * t) * x**2) + _exact_variance(alpha, 0.0, t, J))


def _holder_pairs(T, exps):
    d = T * 2.0 ** -np.asarray(list(exps), dtype=float)
    return {"start": [(0.0, x) for x in d], "end": [(T - x, T) for x in d]}


def markov_holder_exact(gamma, alpha, T=1.0, x0=(0.0,), exps=range(4, 14)):
    """Exact ``|E||X(t2)||^2 - E||X(t1)||^2|`` for ``F = 0`` on dyadic pairs.

    Pairs ``(0, delta)`` and ``(T - delta, T)`` with ``delta = T 2^{-e}``;
    one fit per family.
    """
    beta = NoiseModel(alpha, 1).beta_max
    if not 0 <= gamma < beta:
        raise PreconditionError(f"gamma must satisfy 0 <= gamma < beta = {beta}")
    x0 = np.asarray(x0, dtype=float)
    rows, fits = [], {}
    for fam, pairs in _holder_pairs(T, exps).items():
        dt, diff = [], []
        for t1, t2 in pairs:
            v = abs(_exact_second_moment(alpha, t2, x0) - _exact_second_moment(alpha, t1, x0))
            dt.append(t2 - t1)
            diff.append(v)
            rows.append(make_row(f"markov-holder-{fam}", "exact", alpha, beta, gamma,
                                 "squared-norm", math.nan, t2 - t1, 0, 0, v))
        fits[fam] = fit_rate(dt, diff, kind="k")
    return rows, fits


def markov_holder_mc(gamma, functional, drift, noise, samples, seed, T=1.0, N=1024,
                     exps=range(3, 9), x0=(1.0,), workers=None):
    """Monte Carlo ``|E phi(X(t2)) - E phi(X(t1))|`` on one set of fine paths.

    A family with an inconclusive row (standard error above 30% of the
    difference) is reported but not fitted.
    """
    drift = get_drift(drift) if isinstance(drift, str) else drift
    if not 0 <= gamma < noise.beta_max:
        raise PreconditionError(f"gamma must satisfy 0 <= gamma < beta = {noise.beta_max}")
    cfg = SchemeConfig(T=T, N=N, x0=np.asarray(x0, float))
    be = SpectralBackend(noise.modes)
    stream = IncrementStream(noise, seed, N, T)
    pairs = _holder_pairs(T, exps)
    steps = sorted({int(round(t / cfg.k)) for p in pairs.values() for pr in p for t in pr})
    st = simulate_samples(be, drift, cfg, stream, np.arange(samples), steps, workers=workers)
    at = {n: functional.evaluate(be, st[:, i]) for i, n in enumerate(steps)}
    rows, fits = [], {}
    for fam, prs in pairs.items():
        dt, diff = [], []
        for t1, t2 in prs:
            d = at[int(round(t2 / cfg.k))] - at[int(round(t1 / cfg.k))]
            v = abs(float(d.mean()))
            se = float(d.std(ddof=1) / math.sqrt(samples))
            dt.append(t2 - t1)
            diff.append(max(v, 1e-300))
            rows.append(make_row(f"markov-holder-{fam}", "spectral", noise.alpha, noise.beta_max,
                                 gamma, functional.tag, be.h, t2 - t1, N, samples, v, se,
                                 _flag(v, se)))
        if all(r["flag"] == "ok" for r in rows[-len(prs):]):
            fits[fam] = fit_rate(dt, diff, kind="k")
    return rows, fits


def markov_holder_probe(gamma, alpha, functional=None, **kw):
    """Fitted Hoelder exponent of ``t -> E phi(X(t))``; exact when ``functional`` is None."""
    if functional is None:
        rows, fits = markov_holder_exact(gamma, alpha, **kw)
    else:
        noise = NoiseModel(alpha, kw.pop("modes", 64))
        rows, fits = markov_holder_mc(gamma, functional, kw.pop("drift", "sin"), noise, **kw)
    if not fits:
        return None, rows, fits
    worst = min(fits.values(), key=lambda f: f.slope)
    return worst, rows, fits


def monotone_trend(rows, kind):
    """Spearman correlation of scale against error."""
    return spearman([r[kind] for r in rows], [r["value"] for r in rows])
