"""Discrete Malliavin derivatives and Sobolev-Malliavin norm estimators.

For the scheme ``X^{n+1} = S (X^n + k F(X^n) + dW_n)`` the derivative with
respect to the Brownian increment of direction ``l`` on interval ``i`` is

    v_{i+1} = S b_l,    v_{n+1} = S (I + k F'(X^n)) v_n   (n > i),

with ``b_l = sqrt(q_l) e_l`` (the H0-orthonormal basis).  Norms in ``L_2^0``
are then plain sums of squares over ``l``.

The second half of the module works on a finite Gaussian space: ``N``
intervals of length ``k``, ``L`` noise directions, ``H = R^d``.  Random
variables are cylindrical, ``Y = psi * g(I(phi_1), ..., I(phi_r))`` with
``I(phi) = sum phi[n, l] dB[n, l]``, and integrands are piecewise constant
``Phi_n`` in ``R^{d x L}``.  Gaussian moments are evaluated exactly with
Isserlis' theorem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import PreconditionError
from .rng import standard_normals

__all__ = [
    "propagate_derivative",
    "derivative_tensor",
    "hs_profile",
    "linear_hs_profile",
    "finite_difference_derivative",
    "RefinedNormEstimate",
    "refined_norm",
    "linear_d_part",
    "refined_norm_sweep",
    "isserlis",
    "GaussianSpace",
    "CylindricalY",
    "Integrand",
    "IBPResult",
    "ibp_check",
    "ibp_catalog",
    "dual_burkholder_probe",
    "singular_dual_probe",
    "deterministic_dual_probe",
    "gaussian_abs_moment",
]

IBP_STREAM = 3


# ---- derivative propagation ------------------------------------------------


def propagate_derivative(backend, drift, path, k, i, l, noise):
    """``D^{(i)} X^n`` applied to ``sqrt(q_l) e_l`` for ``n = i+1..N``.

    ``path`` holds the realised states ``X^0..X^N`` of one sample, shape
    ``(N + 1, dim)``.  Returns shape ``(N - i, dim)``; row ``r`` is ``n = i+1+r``.
    """
    path = np.asarray(path, dtype=float)
    N = path.shape[0] - 1
    if not 0 <= i < N:
        raise PreconditionError(f"interval index i={i} outside [0, {N})")
    e = np.zeros(noise.modes)
    e[l] = math.sqrt(noise.weights[l])
    v = backend.step_linear(k, backend.embed(e[None, :])[0])
    out = [v]
    for n in range(i + 1, N):
        u = v if drift.is_zero else v + k * backend.jac_apply(drift, path[n], v)
        v = backend.step_linear(k, u)
        out.append(v)
    return np.array(out)


def derivative_tensor(backend, drift, path, k, noise, n=None):
    """``v[i, l] = D^{(i)} X^n (sqrt(q_l) e_l)`` for all ``i < N_path``.

    Rows ``i >= n`` are identically zero (adaptedness).  Shape
    ``(N, L, dim)``.
    """
    path = np.asarray(path, dtype=float)
    N = path.shape[0] - 1
    n = N if n is None else n
    L = noise.modes
    out = np.zeros((N, L, backend.dim))
    for i in range(n):
        for l in range(L):
            out[i, l] = propagate_derivative(backend, drift, path[: n + 1], k, i, l, noise)[-1]
    return out


def _jac_matrices(backend, drift, states):
    """``I + k F'(X)`` factors without ``k``: returns ``F'`` as matrices."""
    if backend.kind == "fem":
        d = backend.jacobian(drift, states)
        return d  # diagonal, shape (S, dim)
    return backend.jacobian(drift, states)  # (S, dim, dim)


def hs_profile(backend, drift, paths, k, noise):
    """``||D^{(i)} X^N||^2_{L_2^0}`` for every interval ``i``; shape ``(S, N)``.

    Backward adjoint recursion ``Y_{N-1} = S``,
    ``Y_i = Y_{i+1} (I + k F'(X^{i+1})) S`` so that ``D^{(i)} X^N = Y_i b``,
    and the HS norm uses the H-Gram matrix of the state space.
    """
    paths = np.asarray(paths, dtype=float)
    S_, N1, dim = paths.shape
    N = N1 - 1
    Smat = backend.step_matrix(k)
    B = backend.noise_factor(noise)
    Gm = backend.gram()
    # low-rank factor of B B^T keeps the per-step cost at dim^3
    C = B @ B.T
    w, U = np.linalg.eigh(0.5 * (C + C.T))
    keep = w > w.max() * 1e-15
    R = U[:, keep] * np.sqrt(w[keep])
    Y = np.broadcast_to(Smat, (S_, dim, dim)).copy()
    out = np.empty((S_, N))
    for i in range(N - 1, -1, -1):
        if i < N - 1:
            Xn = paths[:, i + 1]
            if drift.is_zero:
                Y = Y @ Smat
            elif backend.kind == "fem":
                Y = (Y + k * Y * backend.jacobian(drift, Xn)[:, None, :]) @ Smat
            else:
                Jm = backend.jacobian(drift, Xn)
                Y = (Y + k * Y @ Jm) @ Smat
        YR = Y @ R
        out[:, i] = np.einsum("sab,ac,scb->s", YR, Gm, YR)
    return out


def linear_hs_profile(backend, noise, k, N):
    """``||S^m P_h Q^{1/2}||^2_{L_2^0}``, ``m = 1..N`` (F = 0, deterministic)."""
    Smat = backend.step_matrix(k)
    B = backend.noise_factor(noise)
    Gm = backend.gram()
    out = np.empty(N)
    V = B
    for m in range(N):
        V = Smat @ V
        out[m] = np.sum(V * (Gm @ V))
    return out


def finite_difference_derivative(backend, drift, x0, xi, k, noise, i, l, eps=1e-5):
    """Central difference of ``X^N`` in the standard normal ``xi[i, l]``.

    ``xi`` has shape ``(N, L)``; increments are ``sqrt(q k) xi``.  Dividing
    by ``sqrt(k)`` turns the derivative in ``xi`` into the derivative in the
    Brownian increment, comparable with :func:`propagate_derivative`.
    """
    from .dynamics import simulate

    scale = np.sqrt(noise.weights * k)
    xp, xm = xi.copy(), xi.copy()
    xp[i, l] += eps
    xm[i, l] -= eps
    dW = np.stack([xp * scale, xm * scale])
    out = simulate(backend, drift, x0, dW, k)
    return (out[0, -1] - out[1, -1]) / (2.0 * eps * math.sqrt(k))


# ---- refined norms ---------------------------------------------------------


@dataclass(frozen=True)
class RefinedNormEstimate:
    """Monte Carlo estimate of ``||X||_{M^{1,p,q}}``.

    ``lp_part`` is ``(E||X||^p)^{1/p}`` and ``d_part`` is
    ``(E ||DX||^p_{L^q L_2^0})^{1/p}``.
    """

    p: float
    q: float
    estimate: float
    stderr: float
    samples: int
    lp_part: float
    d_part: float
    metadata: dict = field(default_factory=dict)


def _time_norm(d, q, k):
    """``(k sum_i d_i^q)^{1/q}`` along the last axis; ``max`` for q = inf."""
    if math.isinf(q):
        return np.max(d, axis=-1)
    return (k * np.sum(d**q, axis=-1)) ** (1.0 / q)


def refined_norm(p, q, x_norms, hs_sq, k, min_samples=100) -> RefinedNormEstimate:
    """``(mean ||X||^p + mean (k sum_i ||D^{(i)}X||^q)^{p/q})^{1/p}``.

    Parameters
    ----------
    x_norms : array, shape (S,)
        ``||X||`` per sample.
    hs_sq : array, shape (S, N)
        Squared ``L_2^0`` norms of the derivative on each interval.
    k : float
        Interval length (time weight).
    """
    if q < 2:
        raise PreconditionError("time exponent q must be >= 2")
    if p < 2:
        raise PreconditionError("moment exponent p must be >= 2")
    x_norms = np.asarray(x_norms, dtype=float)
    hs_sq = np.atleast_2d(np.asarray(hs_sq, dtype=float))
    S = x_norms.size
    if S < min_samples:
        raise PreconditionError(f"refined norm needs at least {min_samples} samples, got {S}")
    dq = _time_norm(np.sqrt(np.maximum(hs_sq, 0.0)), q, k)
    a = x_norms**p
    b = dq**p
    y = a + b
    m = float(np.mean(y))
    est = m ** (1.0 / p)
    se = 0.0
    if S > 1:
        se = est / (p * m) * float(np.std(y, ddof=1)) / math.sqrt(S)
    return RefinedNormEstimate(p, q, est, se, S, float(np.mean(a)) ** (1.0 / p),
                               float(np.mean(b)) ** (1.0 / p))


def linear_d_part(M, alpha, k, N, q, modes=None):
    """``(k sum_{m=1}^N ||S_{h,k}^m P_h Q^{1/2}||^q_{L_2^0})^{1/q}`` for ``F = 0``.

    Diagonal in the discrete eigenbasis: ``||S^m||^2 = sum_l W_l r_l^{2m}``
    with ``W = diag(Z^T Q Z)`` over all noise modes (``modes=None``) or the
    first ``modes``.  ``q = inf`` gives the maximum, attained at ``m = 1``.
    """
    from . import fem

    mu = fem.discrete_eigenvalues(M)
    if modes is None:
        W = fem.noise_gram_diag(M, alpha)
    else:
        Z = fem.cross_gram(modes, M) @ fem.discrete_eigenvectors(M)
        W = np.sum(np.arange(1, modes + 1.0)[:, None] ** -alpha * Z**2, axis=0)
    r2 = (1.0 + k * mu) ** -2.0
    if math.isinf(q):
        return float(math.sqrt(np.sum(W * r2)))
    m = np.arange(1, N + 1)[:, None]
    hs = np.sqrt(np.exp(m * np.log(r2)[None, :]) @ W)
    return float((k * np.sum(hs**q)) ** (1.0 / q))


def refined_norm_sweep(p, q, alpha, hs, ks, samples, seed, drift="sin", T=1.0, modes=64,
                       x0=None, workers=None, min_samples=100):
    """``||X^N_{h,k}||_{M^{1,p,q}}`` on an ``(h, k)`` grid with the FEM backend.

    Every cell uses the same increment stream (finest step count ``T/min(ks)``).
    Returns rows with keys ``p, q, h, k, alpha, estimate, stderr, samples``.
    """
    from .dynamics import FEMBackend, SchemeConfig, get_drift, simulate
    from .noise import IncrementStream, NoiseModel
    from .parallel import map_chunks

    drift = get_drift(drift) if isinstance(drift, str) else drift
    noise = NoiseModel(alpha, modes)
    Ns = [SchemeConfig(T=T, k=k).N for k in ks]
    fine = max(Ns)
    stream = IncrementStream(noise, seed, fine, T)
    rows = []
    for h in hs:
        be = FEMBackend(int(round(1.0 / h)) - 1, modes)
        for N in Ns:
            if fine % N:
                raise PreconditionError(f"N={N} must divide the finest step count {fine}")
            cfg = SchemeConfig(T=T, N=N, x0=x0)
            xinit = cfg.initial(modes)

            def run(ids, be=be, cfg=cfg, xinit=xinit):
                _, path = simulate(be, drift, xinit, stream.block(ids, fine // cfg.N), cfg.k,
                                   keep_path=True)
                return be.norm(path[:, -1]), hs_profile(be, drift, path, cfg.k, noise)

            xn, hsq = map_chunks(run, np.arange(samples), workers=workers)
            est = refined_norm(p, q, xn, hsq, cfg.k, min_samples=min_samples)
            rows.append(dict(p=p, q=q, h=be.h, k=cfg.k, alpha=alpha, estimate=est.estimate,
                             stderr=est.stderr, samples=samples))
    return rows


# ---- Gaussian polynomial calculus -----------------------------------------


def isserlis(vectors) -> float:
    """``E prod_i <a_i, xi>`` for a standard normal vector ``xi``."""
    vectors = [np.asarray(v, dtype=float) for v in vectors]
    n = len(vectors)
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    C = np.array([[a @ b for b in vectors] for a in vectors])

    def haf(idx):
        if not idx:
            return 1.0
        first, rest = idx[0], idx[1:]
        total = 0.0
        for j, other in enumerate(rest):
            c = C[first, other]
            if c != 0.0:
                total += c * haf(rest[:j] + rest[j + 1:])
        return total

    return float(haf(tuple(range(n))))


@dataclass(frozen=True)
class GaussianSpace:
    """``N`` intervals of length ``k`` with ``L`` noise directions."""

    N: int
    L: int
    k: float

    @property
    def size(self) -> int:
        return self.N * self.L

    @property
    def T(self) -> float:
        return self.N * self.k

    def increments(self, seed, samples):
        """Brownian increments ``dB``, shape ``(S, N, L)``."""
        xi = standard_normals(seed, samples, np.arange(self.N), self.L, IBP_STREAM)
        return math.sqrt(self.k) * xi

    def form(self, phi):
        """Linear form of ``I(phi)`` in the standard normal coordinates."""
        return math.sqrt(self.k) * np.asarray(phi, dtype=float).reshape(-1)


class CylindricalY:
    """``Y = psi * g(I(phi_1), ..., I(phi_r))`` for monomial ``g``.

    ``kind`` is one of ``linear`` (I1), ``square`` (I1^2), ``product``
    (I1 I2) and ``cubic`` (I1^3).
    """

    KINDS = {"linear": (1, [0]), "square": (1, [0, 0]), "product": (2, [0, 1]),
             "cubic": (1, [0, 0, 0])}

    def __init__(self, kind, psi, phis):
        if kind not in self.KINDS:
            raise PreconditionError(f"unknown cylindrical variable {kind!r}")
        nphi, factors = self.KINDS[kind]
        phis = [np.asarray(p, dtype=float) for p in phis]
        if len(phis) < nphi:
            raise PreconditionError(f"{kind} needs {nphi} phi arrays")
        self.kind = kind
        self.psi = np.asarray(psi, dtype=float)
        self.phis = phis[:nphi]
        self.factors = factors

    def ints(self, dB):
        return [np.einsum("snl,nl->s", dB, p) for p in self.phis]

    def value(self, dB):
        I = self.ints(dB)
        g = np.ones(dB.shape[0])
        for a in self.factors:
            g = g * I[a]
        return g[:, None] * self.psi[None, :]

    def derivative(self, dB):
        """``D^{(n)} Y`` as ``(S, N, d, L)`` arrays."""
        I = self.ints(dB)
        S = dB.shape[0]
        D = np.zeros((S,) + self.phis[0].shape)
        for pos, a in enumerate(self.factors):
            rest = np.ones(S)
            for q_, b in enumerate(self.factors):
                if q_ != pos:
                    rest = rest * I[b]
            D += rest[:, None, None] * self.phis[a][None]
        return np.einsum("snl,d->sndl", D, self.psi)

    def linear_forms(self, space):
        return [space.form(self.phis[a]) for a in self.factors]


class Integrand:
    """Piecewise-constant adapted integrand ``Phi_n``.

    ``deterministic``: ``Phi_n = B[n]``.  ``adapted``:
    ``Phi_n = B[n] * sum_{m<n} chi[m] . dB[m]`` (linear in past increments).
    ``B`` has shape ``(N, d, L)`` and ``chi`` shape ``(N, L)``.
    """

    def __init__(self, B, chi=None):
        self.B = np.asarray(B, dtype=float)
        self.chi = None if chi is None else np.asarray(chi, dtype=float)

    @property
    def kind(self):
        return "deterministic" if self.chi is None else "adapted"

    def scalar(self, dB):
        """Per-interval random scalar factor, shape ``(S, N)``."""
        S, N = dB.shape[:2]
        if self.chi is None:
            return np.ones((S, N))
        c = np.einsum("snl,nl->sn", dB, self.chi)
        out = np.zeros((S, N))
        out[:, 1:] = np.cumsum(c, axis=1)[:, :-1]
        return out

    def values(self, dB):
        return self.scalar(dB)[:, :, None, None] * self.B[None]

    def skorohod(self, dB):
        """``delta Phi = sum_n Phi_n dB_n`` (Ito sum), shape ``(S, d)``."""
        return np.einsum("sn,ndl,snl->sd", self.scalar(dB), self.B, dB)

    def past_form(self, space, n):
        """Linear form of ``sum_{m<n} chi[m] . dB[m]``."""
        a = np.zeros((space.N, space.L))
        a[:n] = self.chi[:n]
        return space.form(a)


def _delta_terms(space, Y, Phi):
    """``<psi, delta Phi>`` as a list of (coef, forms) products."""
    terms = []
    for n in range(space.N):
        b = np.zeros((space.N, space.L))
        b[n] = Y.psi @ Phi.B[n]
        fb = space.form(b)
        if Phi.chi is None:
            terms.append((1.0, [fb]))
        elif n > 0:
            terms.append((1.0, [fb, Phi.past_form(space, n)]))
    return terms


def _dy_phi_terms(space, Y, Phi):
    """``k sum_n <D^{(n)} Y, Phi_n>`` as (coef, forms) products."""
    forms = Y.linear_forms(space)
    terms = []
    for pos, a in enumerate(Y.factors):
        rest = [f for q_, f in enumerate(forms) if q_ != pos]
        for n in range(space.N):
            c = float(Y.phis[a][n] @ (Y.psi @ Phi.B[n]))
            if c == 0.0:
                continue
            if Phi.chi is None:
                terms.append((space.k * c, rest))
            elif n > 0:
                terms.append((space.k * c, rest + [Phi.past_form(space, n)]))
    return terms


def _expect(terms, extra=()):
    return sum(c * isserlis(list(extra) + list(f)) for c, f in terms)


@dataclass(frozen=True)
class IBPResult:
    lhs: float
    rhs: float
    discrepancy: float
    stderr: float
    lhs_exact: float
    rhs_exact: float
    samples: int
    name: str = ""


def ibp_check(Y, Phi, space, samples=20000, seed=0, name="") -> IBPResult:
    """``E<Y, delta Phi>`` against ``E sum_n k <D^{(n)} Y, Phi_n>``.

    Both sides are estimated by Monte Carlo on the same draws (the
    discrepancy is a paired mean with its standard error) and evaluated
    exactly with Isserlis' theorem.
    """
    if not isinstance(Y, CylindricalY):
        raise PreconditionError("Y must come from the cylindrical catalog")
    dB = space.increments(seed, np.arange(samples))
    lhs_s = np.sum(Y.value(dB) * Phi.skorohod(dB), axis=1)
    rhs_s = space.k * np.einsum("sndl,sndl->s", Y.derivative(dB), Phi.values(dB))
    diff = lhs_s - rhs_s
    yforms = Y.linear_forms(space)
    lhs_exact = _expect(_delta_terms(space, Y, Phi), extra=yforms)
    rhs_exact = _expect(_dy_phi_terms(space, Y, Phi))
    return IBPResult(float(lhs_s.mean()), float(rhs_s.mean()), float(diff.mean()),
                     float(diff.std(ddof=1) / math.sqrt(samples)), lhs_exact, rhs_exact,
                     samples, name)


def ibp_catalog(space=None, d=3, seed=11):
    """Reproducible test cases ``(name, Y, Phi)`` covering every catalog kind."""
    space = GaussianSpace(6, 2, 1.0 / 6.0) if space is None else space
    rng = np.random.default_rng(seed)
    N, L = space.N, space.L
    psi = rng.normal(size=d)
    phi1, phi2, phi3 = (rng.normal(size=(N, L)) for _ in range(3))
    Bdet = rng.normal(size=(N, d, L))
    det = Integrand(Bdet)
    adp = Integrand(Bdet, chi=phi3)
    # an adapted integrand built from phi1 makes product moments non-trivial
    adp1 = Integrand(np.einsum("d,nl->ndl", psi, phi2), chi=phi1)
    cases = []
    for kind, phis in [("linear", [phi1]), ("square", [phi1]), ("product", [phi1, phi2]),
                       ("cubic", [phi1])]:
        Y = CylindricalY(kind, psi, phis)
        cases.append((f"{kind}/deterministic", Y, det))
        cases.append((f"{kind}/adapted", Y, adp))
    cases.append(("product/adapted-aligned", CylindricalY("product", psi, [phi1, phi2]), adp1))
    cases.append(("square/adapted-aligned", CylindricalY("square", psi, [phi1]), adp1))
    return space, cases


# ---- dual Burkholder probes -------------------------------------------------


def conjugate(p):
    return math.inf if p == 1 else (1.0 if math.isinf(p) else p / (p - 1.0))


def gaussian_abs_moment(s, m):
    """``E|Z|^m`` for ``Z ~ N(0, s^2)``."""
    return s**m * 2.0 ** (m / 2.0) * gamma_fn((m + 1.0) / 2.0) / math.sqrt(math.pi)


def dual_burkholder_probe(p, q, cases, space, samples=20000, seed=5):
    """Ratios ``|E<Y, delta Phi>| / (||Phi||_{L^p' L^q'} ||Y||_{M^{1,p,q}})``.

    Every quantity is a Monte Carlo mean over the same draws; the numerator
    uses the derivative form ``E k sum <D Y, Phi>``.  Returns a list of dicts
    with ``ratio`` and a delta-method ``stderr``.
    """
    pc, qc = conjugate(p), conjugate(q)
    dB = space.increments(seed, np.arange(samples))
    rows = []
    for name, Y, Phi in cases:
        num_s = space.k * np.einsum("sndl,sndl->s", Y.derivative(dB), Phi.values(dB))
        phi_t = np.sqrt(np.einsum("sndl,sndl->sn", Phi.values(dB), Phi.values(dB)))
        phi_norm_s = _time_norm(phi_t, qc, space.k) ** pc
        y_s = np.linalg.norm(Y.value(dB), axis=1) ** p
        dy = Y.derivative(dB)
        dy_t = np.sqrt(np.einsum("sndl,sndl->sn", dy, dy))
        dyq_s = _time_norm(dy_t, q, space.k) ** p
        num = abs(num_s.mean())
        a = phi_norm_s.mean() ** (1.0 / pc)
        b = (y_s.mean() + dyq_s.mean()) ** (1.0 / p)
        den = a * b
        ratio = num / den if den > 0 else 0.0
        se_num = num_s.std(ddof=1) / math.sqrt(samples)
        rows.append(dict(name=name, numerator=num, phi_norm=a, y_norm=b, ratio=ratio,
                         stderr=se_num / den if den > 0 else 0.0))
    return rows


def singular_dual_probe(p, q, sigma, space, psi, eta, Ys):
    """Exact probe for ``Phi(t) = (T - t)^{-sigma} psi (x) eta``.

    Requires ``q' sigma < 1``; the L^2-in-time norm of ``Phi`` is infinite as
    soon as ``2 sigma >= 1``.  ``Ys`` are ``(psi_Y, phi, power)`` triples
    describing ``Y = psi_Y I(phi)^power`` with odd ``power``.  All expectations
    and time integrals are closed form.
    """
    qc = conjugate(q)
    if not qc * sigma < 1:
        raise PreconditionError("need q' * sigma < 1 for a finite dual norm")
    T, k = space.T, space.k
    psi, eta = np.asarray(psi, float), np.asarray(eta, float)
    t = k * np.arange(space.N + 1)
    w = ((T - t[:-1]) ** (1 - sigma) - (T - t[1:]) ** (1 - sigma)) / (1 - sigma)
    phi_norm = np.linalg.norm(psi) * np.linalg.norm(eta) * (T ** (1 - qc * sigma) / (1 - qc * sigma)) ** (1 / qc)
    l2 = math.inf if 2 * sigma >= 1 else float(
        np.linalg.norm(psi) * np.linalg.norm(eta) * math.sqrt(T ** (1 - 2 * sigma) / (1 - 2 * sigma)))
    rows = []
    for psi_y, phi, r in Ys:
        psi_y, phi = np.asarray(psi_y, float), np.asarray(phi, float)
        s = math.sqrt(k * np.sum(phi**2))
        # E[g'(I)] for g = I^r, r odd: r (r-2)!! s^{r-1}
        eg = r * (s ** (r - 1)) * (math.prod(range(r - 2, 0, -2)) if r > 2 else 1)
        num = abs(float(psi_y @ psi) * eg * float(np.sum((phi @ eta) * w)))
        dphi = (k * np.sum(np.linalg.norm(phi, axis=1) ** q)) ** (1.0 / q)
        ynorm = (np.linalg.norm(psi_y) ** p * (gaussian_abs_moment(s, r * p)
                 + r**p * gaussian_abs_moment(s, (r - 1) * p) * dphi**p)) ** (1.0 / p)
        rows.append(dict(power=r, numerator=num, phi_norm=phi_norm, y_norm=ynorm,
                         ratio=num / (phi_norm * ynorm), l2_bound=l2))
    return rows


def deterministic_dual_probe(p, q, space, B):
    """Exact probe for deterministic ``Phi_n = B[n]`` and ``Y = delta Phi``.

    ``E<Y, delta Phi> = ||Phi||^2_{L^2}``, ``D Y = Phi`` and, for ``p = 4``,
    ``E||Y||^4 = (tr C)^2 + 2 tr(C^2)`` with ``C = k sum_n B_n B_n^T``.
    """
    if p != 4:
        raise PreconditionError("closed-form moments are implemented for p = 4")
    B = np.asarray(B, dtype=float)
    k = space.k
    qc = conjugate(q)
    mags = np.sqrt(np.sum(B**2, axis=(1, 2)))
    C = k * np.einsum("ndl,nel->de", B, B)
    num = k * float(np.sum(mags**2))
    phi_norm = float(_time_norm(mags, qc, k))
    y4 = float(np.trace(C) ** 2 + 2 * np.trace(C @ C))
    ynorm = (y4 + float(_time_norm(mags, q, k)) ** 4) ** 0.25
    return dict(numerator=num, phi_norm=phi_norm, y_norm=ynorm, ratio=num / (phi_norm * ynorm))
