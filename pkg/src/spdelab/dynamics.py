"""Semilinear drift, the semi-implicit Euler-Maruyama scheme and linear references.

One step of the scheme is ``X' = S_{h,k}(X + k F(X) + dW)`` with
``S_{h,k} = (I + k A_h)^{-1} P_h``.  Two spatial backends share this interface:

* :class:`SpectralBackend` keeps ``J`` sine coefficients; ``A`` is diagonal
  and the Nemytskii drift is evaluated pseudo-spectrally with a type-I DST.
* :class:`FEMBackend` keeps nodal values of a P1 function; the drift is the
  nodal interpolant of ``f(u)``.

States are batched along the leading axis (one row per sample).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
from scipy.special import zeta

from . import fem
from .errors import PreconditionError
from .noise import IncrementStream, NoiseModel
from .parallel import map_chunks
from .rng import standard_normals
from .spectral import dirichlet_eigenvalues

__all__ = [
    "DriftSpec",
    "get_drift",
    "SchemeConfig",
    "Trajectory",
    "SpectralBackend",
    "FEMBackend",
    "make_backend",
    "nemytskii_apply",
    "euler_step",
    "simulate",
    "simulate_path",
    "simulate_samples",
    "exact_linear_sample",
    "second_moment_linear",
    "dyadic_checkpoints",
]

EXACT_STREAM = 2


@dataclass(frozen=True)
class DriftSpec:
    """Scalar nonlinearity ``f`` with derivatives and declared bounds.

    ``bound1`` and ``bound2`` are the sup-norms of ``f'`` and ``f''`` (inf if
    unbounded, allowed only for test drifts).
    """

    name: str
    f: Callable
    df: Callable
    d2f: Callable
    bound1: float
    bound2: float

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def check_bounds(self, grid=None) -> bool:
        x = np.linspace(-20, 20, 4001) if grid is None else np.asarray(grid)
        tol = 1e-12
        return bool(np.all(np.abs(self.df(x)) <= self.bound1 + tol)
                    and np.all(np.abs(self.d2f(x)) <= self.bound2 + tol))


def _rational(c):
    return DriftSpec(
        "rational",
        lambda x: c / (1.0 + x**2),
        lambda x: -2.0 * c * x / (1.0 + x**2) ** 2,
        lambda x: c * (6.0 * x**2 - 2.0) / (1.0 + x**2) ** 3,
        abs(c) * 3.0 * math.sqrt(3.0) / 8.0,
        abs(c) * 2.0,
    )


def get_drift(tag: str = "sin", c: float = 1.0) -> DriftSpec:
    """Drift by name: ``sin``, ``rational`` (``c/(1+x^2)``), ``zero``,
    ``neg_sin``, and the test-only ``identity`` and ``constant``."""
    zero = np.zeros_like
    if tag == "sin":
        return DriftSpec("sin", np.sin, np.cos, lambda x: -np.sin(x), 1.0, 1.0)
    if tag == "neg_sin":
        return DriftSpec("neg_sin", lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin, 1.0, 1.0)
    if tag == "rational":
        return _rational(c)
    if tag == "zero":
        return DriftSpec("zero", zero, zero, zero, 0.0, 0.0)
    if tag == "identity":
        return DriftSpec("identity", lambda x: np.array(x, dtype=float), np.ones_like, zero,
                         math.inf, 0.0)
    if tag == "constant":
        return DriftSpec("constant", lambda x: np.full_like(x, c, dtype=float), zero, zero, 0.0, 0.0)
    raise PreconditionError(f"unknown drift {tag!r}")


def dyadic_checkpoints(N: int, levels: int = 3) -> list:
    """Step indices of ``T/2^levels, ..., T/2, T`` (requires ``2^levels | N``)."""
    if N % 2**levels:
        raise PreconditionError(f"N={N} must be divisible by {2**levels} for dyadic checkpoints")
    return [N >> e for e in range(levels, -1, -1)]


@dataclass
class SchemeConfig:
    """Time grid and initial value.

    If ``k`` is given, ``N = floor(T/k)`` so that ``t_N <= T < t_N + k``;
    otherwise ``k = T/N``.  ``x0`` holds sine coefficients (default zero).
    """

    T: float = 1.0
    N: int | None = None
    k: float | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.N is None and self.k is None:
            raise PreconditionError("either the step count N or the step size k is required")
        if self.k is None:
            self.k = self.T / self.N
        elif not 0 < self.k < 1:
            raise PreconditionError("step size k must lie in (0, 1)")
        elif self.N is None:
            self.N = int(math.floor(self.T / self.k + 1e-12))
        if not 0 < self.k < 1:
            raise PreconditionError("step size k must lie in (0, 1)")
        if self.N < 1:
            raise PreconditionError("need at least one time step")

    @property
    def times(self) -> np.ndarray:
        return self.k * np.arange(self.N + 1)

    def initial(self, J: int) -> np.ndarray:
        x = np.zeros(J)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            n = min(J, x0.size)
            x[:n] = x0[:n]
        return x


@dataclass
class Trajectory:
    """States at checkpoint step indices; ``states`` has shape (C, dim)."""

    steps: list
    times: np.ndarray
    states: np.ndarray
    backend: str
    sample: int | None = None


class SpectralBackend:
    """Spectral Galerkin space of the first ``J`` sine modes.

    ``grid`` is the number of interior collocation points for the drift
    (default ``2J + 1``).
    """

    kind = "spectral"

    def __init__(self, J: int, grid: int | None = None):
        if J < 1:
            raise PreconditionError("mode count J must be >= 1")
        self.J = J
        self.grid = 2 * J + 1 if grid is None else grid
        if self.grid < 2 * J:
            raise PreconditionError("collocation grid must have at least 2J points")
        self.lam = dirichlet_eigenvalues(J)

    @property
    def dim(self) -> int:
        return self.J

    @property
    def label(self) -> str:
        return f"spectral(J={self.J})"

    @property
    def h(self) -> float:
        return 0.0

    def initial(self, x0: np.ndarray) -> np.ndarray:
        out = np.zeros(self.J)
        n = min(self.J, len(x0))
        out[:n] = np.asarray(x0, dtype=float)[:n]
        return out

    def load(self, dW: np.ndarray) -> np.ndarray:
        """Noise increment (sine coefficients) projected onto the space."""
        J = dW.shape[-1]
        if J >= self.J:
            return dW[..., : self.J]
        out = np.zeros(dW.shape[:-1] + (self.J,))
        out[..., :J] = dW
        return out

    def to_grid(self, c: np.ndarray) -> np.ndarray:
        pad = np.zeros(c.shape[:-1] + (self.grid,))
        pad[..., : self.J] = c
        return (math.sqrt(2.0) / 2.0) * sfft.dst(pad, type=1, axis=-1)

    def from_grid(self, g: np.ndarray) -> np.ndarray:
        c = sfft.dst(g, type=1, axis=-1)[..., : self.J]
        return (math.sqrt(2.0) / (2.0 * (self.grid + 1))) * c

    @property
    def grid_points(self) -> np.ndarray:
        return np.arange(1, self.grid + 1) / (self.grid + 1)

    def nemytskii(self, drift: DriftSpec, c: np.ndarray) -> np.ndarray:
        if drift.is_zero:
            return np.zeros_like(c)
        return self.from_grid(drift.f(self.to_grid(c)))

    def jacobian(self, drift: DriftSpec, c: np.ndarray) -> np.ndarray:
        """Matrix of ``v -> F'(c) v``; shape ``(..., J, J)``."""
        x = self.grid_points
        B = math.sqrt(2.0) * np.sin(np.pi * np.outer(x, np.arange(1, self.J + 1)))
        w = drift.df(self.to_grid(c))
        return (B.T * w[..., None, :]) @ B / (self.grid + 1)

    def jac_apply(self, drift, c, v):
        """``F'(c) v`` pseudo-spectrally (batched)."""
        return self.from_grid(drift.df(self.to_grid(c)) * self.to_grid(v))

    def resolvent(self, k: float) -> np.ndarray:
        return 1.0 / (1.0 + k * self.lam)

    def step_matrix(self, k):
        return np.diag(1.0 / (1.0 + k * self.lam))

    def noise_factor(self, noise):
        """Images of the H0 basis ``sqrt(q_l) e_l`` as columns (dim x L)."""
        L = noise.modes
        B = np.zeros((self.J, L))
        n = min(self.J, L)
        B[np.arange(n), np.arange(n)] = np.sqrt(noise.weights[:n])
        return B

    def step(self, k, drift, c, dW):
        rhs = c + self.load(dW)
        if not drift.is_zero:
            rhs = rhs + k * self.nemytskii(drift, c)
        return rhs / (1.0 + k * self.lam)

    def step_linear(self, k, v):
        """``S_{h,k}`` on (a batch of) state vectors."""
        return v / (1.0 + k * self.lam)

    def embed(self, v):
        """Sine coefficients of a noise direction, cut or padded to ``J`` modes."""
        return self.load(np.asarray(v, dtype=float))

    def norm(self, c):
        return np.sqrt(np.sum(np.asarray(c) ** 2, axis=-1))

    def gram(self):
        return np.eye(self.J)

    def spectral_inner(self, c, a):
        """``<c, sum_j a_j e_j>`` for states ``c`` and sine coefficients ``a``."""
        n = min(self.J, a.shape[-1])
        return np.sum(c[..., :n] * a[..., :n], axis=-1)


class FEMBackend:
    """P1 finite elements with ``M`` interior nodes; noise uses ``J`` modes."""

    kind = "fem"

    def __init__(self, M: int, J: int | None = None):
        self.ops = fem.assemble(M)
        self.M = M
        self.J = max(256, 4 * M) if J is None else J
        self.G = fem.cross_gram(self.J, M)
        self._banded = {}

    @property
    def dim(self) -> int:
        return self.M

    @property
    def label(self) -> str:
        return f"fem(M={self.M})"

    @property
    def h(self) -> float:
        return self.ops.h

    def _ab(self, k):
        if k not in self._banded:
            self._banded[k] = self.ops.banded(k)
        return self._banded[k]

    def initial(self, x0):
        x0 = np.asarray(x0, dtype=float)
        if not np.any(x0):
            return np.zeros(self.M)
        return fem.project(self.ops, fem.cross_gram(x0.size, self.M), x0)

    def load(self, dW):
        """``mass @ P_h dW`` for sine-coefficient increments ``dW``."""
        J = dW.shape[-1]
        G = self.G if J == self.J else fem.cross_gram(J, self.M)
        return dW @ G

    def nemytskii(self, drift, c):
        return drift.f(c)

    def jacobian(self, drift, c):
        """Diagonal of the nodal ``F'(c)``; shape ``(..., M)``."""
        return drift.df(c)

    def jac_apply(self, drift, c, v):
        return drift.df(c) * v

    def step_matrix(self, k):
        return fem.step_matrix(self.ops, k)

    def noise_factor(self, noise):
        """``P_h`` images of ``sqrt(q_l) e_l`` as columns (dim x L)."""
        return self.embed(np.diag(np.sqrt(noise.weights))).T

    def _solve(self, k, rhs):
        return sla.solve_banded((1, 1), self._ab(k), rhs.T).T

    def step(self, k, drift, c, dW):
        u = c if drift.is_zero else c + k * drift.f(c)
        return self._solve(k, self.ops.mass_apply(u) + self.load(dW))

    def step_linear(self, k, v):
        return self._solve(k, self.ops.mass_apply(v))

    def embed(self, v):
        """``P_h`` of sine-coefficient vectors."""
        return sla.solve_banded((1, 1), self._ab(0.0), self.load(v).T).T

    def norm(self, c):
        return self.ops.norm(c)

    def gram(self):
        return self.ops.mass

    def spectral_inner(self, c, a):
        G = fem.cross_gram(a.shape[-1], self.M)
        return np.sum((a @ G) * c, axis=-1)


def make_backend(kind: str, size: int, noise_modes: int | None = None):
    """``make_backend("spectral", J)`` or ``make_backend("fem", M, J_noise)``."""
    if kind == "spectral":
        return SpectralBackend(size)
    if kind == "fem":
        return FEMBackend(size, noise_modes)
    raise PreconditionError(f"unknown backend {kind!r}")


def nemytskii_apply(drift: DriftSpec, state: np.ndarray, backend) -> np.ndarray:
    """``F(X) = f(X(.))`` in the coordinates of ``backend``."""
    return backend.nemytskii(drift, np.asarray(state, dtype=float))


def euler_step(backend, drift: DriftSpec, k: float, state, dW) -> np.ndarray:
    """``S_{h,k}(X + k F(X) + dW)``."""
    return backend.step(k, drift, np.asarray(state, dtype=float), np.asarray(dW, dtype=float))


def simulate(backend, drift, x0, dW, k, checkpoints=None, keep_path=False):
    """Run the scheme on a batch of increment sequences.

    Parameters
    ----------
    backend : SpectralBackend or FEMBackend
    drift : DriftSpec
    x0 : array_like
        Initial value as sine coefficients.
    dW : ndarray, shape (S, N, J)
        Increments in sine coefficients.
    k : float
    checkpoints : list of int, optional
        Step indices to record (default: only ``N``).
    keep_path : bool
        Also return every state, shape ``(S, N + 1, dim)``.

    Returns
    -------
    ndarray of shape (S, len(checkpoints), dim), and the path if requested.
    """
    dW = np.asarray(dW, dtype=float)
    S, N = dW.shape[:2]
    checkpoints = [N] if checkpoints is None else list(checkpoints)
    state = np.broadcast_to(backend.initial(np.asarray(x0, dtype=float)), (S, backend.dim)).copy()
    out = np.empty((S, len(checkpoints), backend.dim))
    path = np.empty((S, N + 1, backend.dim)) if keep_path else None
    want = {n: i for i, n in enumerate(checkpoints)}
    if 0 in want:
        out[:, want[0]] = state
    if keep_path:
        path[:, 0] = state
    for n in range(N):
        state = backend.step(k, drift, state, dW[:, n])
        if not np.all(np.isfinite(state)):
            raise FloatingPointError(f"non-finite state at step {n + 1}")
        if n + 1 in want:
            out[:, want[n + 1]] = state
        if keep_path:
            path[:, n + 1] = state
    return (out, path) if keep_path else out


def simulate_samples(backend, drift, config: SchemeConfig, stream: IncrementStream,
                     samples, checkpoints=None, workers=None, chunk=None):
    """Checkpoint states for many samples, computed in deterministic chunks."""
    m = stream.fine_steps // config.N
    if m * config.N != stream.fine_steps:
        raise PreconditionError(
            f"N={config.N} must divide the finest step count {stream.fine_steps}"
        )
    x0 = config.initial(stream.noise.modes)

    def run(ids):
        return simulate(backend, drift, x0, stream.block(ids, m), config.k, checkpoints)

    kwargs = {} if chunk is None else {"chunk": chunk}
    return map_chunks(run, np.asarray(samples), workers=workers, **kwargs)


def simulate_path(config: SchemeConfig, drift, noise: NoiseModel, seed: int, sample: int,
                  backend=None, fine_steps=None, checkpoints=None) -> Trajectory:
    """One sample path of the scheme, driven by the seeded increment stream."""
    backend = SpectralBackend(noise.modes) if backend is None else backend
    stream = IncrementStream(noise, seed, fine_steps or config.N, config.T)
    checkpoints = dyadic_checkpoints(config.N) if checkpoints is None else checkpoints
    st = simulate_samples(backend, drift, config, stream, [sample], checkpoints, workers=1)
    return Trajectory(list(checkpoints), config.k * np.asarray(checkpoints), st[0],
                      backend.label, sample)


def exact_linear_sample(J: int, noise: NoiseModel, config: SchemeConfig, seed: int,
                        sample, checkpoints=None) -> Trajectory:
    """Exact Ornstein-Uhlenbeck sample of the linear equation on the step grid.

    Mode ``j`` evolves as ``x' = e^{-lam k} x + N(0, q (1 - e^{-2 lam k})/(2 lam))``.
    ``sample`` may be an int or an array (then ``states`` gains a sample axis).
    """
    lam = dirichlet_eigenvalues(J)
    q = noise.weights_for(J)
    k = config.k
    decay = np.exp(-lam * k)
    sd = np.sqrt(q * -np.expm1(-2.0 * lam * k) / (2.0 * lam))
    checkpoints = dyadic_checkpoints(config.N) if checkpoints is None else list(checkpoints)
    ids = np.atleast_1d(sample)
    xi = standard_normals(seed, ids, np.arange(config.N), J, EXACT_STREAM)
    x = np.broadcast_to(config.initial(J), (ids.size, J)).copy()
    out = np.empty((ids.size, len(checkpoints), J))
    want = {n: i for i, n in enumerate(checkpoints)}
    if 0 in want:
        out[:, want[0]] = x
    for n in range(config.N):
        x = decay * x + sd * xi[:, n]
        if n + 1 in want:
            out[:, want[n + 1]] = x
    states = out[0] if np.ndim(sample) == 0 else out
    return Trajectory(checkpoints, k * np.asarray(checkpoints), states, f"exact(J={J})",
                      None if np.ndim(sample) else int(sample))


# ---- second moments --------------------------------------------------------


def _spectral_cutoff(k, T, J0):
    """Mode count beyond which ``k lam`` and ``T lam`` exceed 40."""
    lam_min = 40.0 / min(k, T)
    return max(J0, int(math.ceil(math.sqrt(lam_min) / math.pi)) + 1)


def _time_tail(alpha, J, k):
    """``sum_{j>J} q_j k / (2 (2 + k lam_j))`` via a convergent zeta series."""
    total, n = 0.0, 0
    while True:
        term = (-2.0 / k) ** n * np.pi ** (-2.0 * (n + 1)) * zeta(2.0 * n + 2.0 + alpha, J + 1) / 2.0
        total += term
        if abs(term) <= 1e-17 * abs(total) or n > 60:
            return total
        n += 1


@dataclass(frozen=True)
class SecondMoment:
    exact: float
    discrete: float
    tail: float = 0.0

    def __iter__(self):
        return iter((self.exact, self.discrete))


def _exact_moment(x0, alpha, T, J, truncate):
    lam = dirichlet_eigenvalues(J)
    q = np.arange(1, J + 1, dtype=float) ** -alpha
    x = np.zeros(J)
    x[: min(J, x0.size)] = x0[:J]
    val = np.sum(np.exp(-2.0 * lam * T) * x**2) + np.sum(q * -np.expm1(-2.0 * lam * T) / (2.0 * lam))
    tail = zeta(2.0 + alpha, J + 1) / (2.0 * np.pi**2)
    return float(val + (0.0 if truncate else tail)), float(tail)


def second_moment_linear(backend, noise: NoiseModel, config: SchemeConfig,
                         untruncated: bool = True) -> SecondMoment:
    """``E||X(T)||^2`` and ``E||X_{h,k}^N||^2`` for ``F = 0``, without sampling.

    ``exact = sum_j e^{-2 lam T} x_j^2 + q_j (1 - e^{-2 lam T})/(2 lam)`` and
    ``discrete = ||S^N P_h X0||^2 + k sum_{m=1}^N ||S^m||_{L_2^0}^2``.
    With ``untruncated`` (default) both sums run over every noise mode
    (Hurwitz-zeta tails; spectral backends then act as the untruncated
    spectral Galerkin space).  Otherwise noise and spectral space are cut at
    ``noise.modes``/``backend.J``, the setting of a Monte Carlo run; ``tail``
    reports the discarded stationary variance.
    """
    x0 = config.initial(max(noise.modes, 1) if config.x0 is None else len(config.x0))
    k, N, T, alpha = config.k, config.N, config.T, noise.alpha
    Tn = N * k
    if backend.kind == "spectral":
        if untruncated:
            J = _spectral_cutoff(k, Tn, max(backend.J, x0.size))
        else:
            J = min(backend.J, noise.modes)
        lam = dirichlet_eigenvalues(J)
        q = noise.weights_for(J)
        x = np.zeros(J)
        nx = min(J, x0.size)
        x[:nx] = x0[:nx]
        r2 = (1.0 + k * lam) ** -2.0
        r2N = r2**N
        disc = np.sum(r2N * x**2) + np.sum(q * (1.0 - r2N) / (2.0 * lam + k * lam**2))
        exact, tail = _exact_moment(x0, alpha, Tn, J, truncate=not untruncated)
        if untruncated:
            disc += tail - _time_tail(alpha, J, k)
        else:
            exact, tail = _exact_moment(x0, alpha, Tn, noise.modes, truncate=True)
        return SecondMoment(exact, float(disc), float(tail))
    # FEM: eigen-coordinates of A_h, W = Z^T diag(q) Z is diagonal
    ops = backend.ops
    mu = fem.discrete_eigenvalues(ops.M)
    if untruncated:
        W = fem.noise_gram_diag(ops.M, alpha)
    else:
        Z = fem.cross_gram(noise.modes, ops.M) @ fem.discrete_eigenvectors(ops.M)
        W = np.sum(noise.weights[:, None] * Z**2, axis=0)
    Zx = x0 @ (fem.cross_gram(x0.size, ops.M) @ fem.discrete_eigenvectors(ops.M))
    r2 = (1.0 + k * mu) ** -2.0
    r2N = r2**N
    disc = np.sum(r2N * Zx**2) + np.sum(W * (1.0 - r2N) / (2.0 * mu + k * mu**2))
    exact, tail = _exact_moment(x0, alpha, Tn, max(noise.modes, x0.size), truncate=not untruncated)
    return SecondMoment(exact, float(disc), float(tail))
