"""Exact spectral calculus for A = -d^2/dx^2 with Dirichlet conditions on (0, 1).

The eigenpairs are closed form, ``lambda_j = (j pi)^2`` and
``e_j(x) = sqrt(2) sin(j pi x)``, so every function of ``A`` acts diagonally on
coefficient vectors.  Coefficient vectors are plain 1-d (or batched, last axis =
mode) numpy arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import PreconditionError, QuadratureWarning

__all__ = [
    "SpectralModel",
    "LqNorm",
    "dirichlet_eigenvalues",
    "sine_basis",
    "semigroup_apply",
    "frac_power_apply",
    "sobolev_norm",
    "smoothing_probe",
    "smoothing_bound",
    "semigroup_lq_norm",
]


def dirichlet_eigenvalues(J: int) -> np.ndarray:
    """Return ``(j pi)^2`` for ``j = 1..J``."""
    j = np.arange(1, J + 1, dtype=float)
    return (np.pi * j) ** 2


def sine_basis(J: int, x: np.ndarray) -> np.ndarray:
    """Evaluate ``e_j(x)`` for ``j = 1..J``; returns shape ``(len(x), J)``."""
    x = np.asarray(x, dtype=float)
    j = np.arange(1, J + 1, dtype=float)
    return np.sqrt(2.0) * np.sin(np.pi * np.outer(x, j))


@dataclass(frozen=True)
class SpectralModel:
    """The first ``modes`` eigenpairs of the Dirichlet Laplacian on (0, 1)."""

    modes: int

    def __post_init__(self):
        if self.modes < 1:
            raise PreconditionError("mode count J must be >= 1")

    @property
    def eigenvalues(self) -> np.ndarray:
        return dirichlet_eigenvalues(self.modes)

    def evaluate(self, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Point values of ``sum_j c_j e_j(x)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        return sine_basis(coeffs.shape[-1], x) @ coeffs.T


def _check_len(model: SpectralModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.modes:
        raise PreconditionError(
            f"coefficient vector has {x.shape[-1]} modes, model has {model.modes}"
        )
    return x


def semigroup_apply(model: SpectralModel, t: float, x: np.ndarray) -> np.ndarray:
    """Apply ``S(t) = exp(-tA)``."""
    if t < 0:
        raise PreconditionError("semigroup time t must be >= 0")
    x = _check_len(model, x)
    if t == 0:
        return x.copy()
    return np.exp(-model.eigenvalues * t) * x


def frac_power_apply(model: SpectralModel, rho: float, x: np.ndarray) -> np.ndarray:
    """Apply ``A^rho`` for any real ``rho`` (diagonal at finite J)."""
    x = _check_len(model, x)
    if rho == 0:
        return x.copy()
    return model.eigenvalues ** rho * x


def sobolev_norm(model: SpectralModel, r: float, x: np.ndarray) -> float:
    """The ``H^r``-dot norm ``||A^{r/2} x||``."""
    return float(np.linalg.norm(frac_power_apply(model, r / 2.0, x)))


def smoothing_probe(model: SpectralModel, rho: float, t: float) -> float:
    """Operator norm ``||A^rho S(t)|| = max_j lambda_j^rho exp(-lambda_j t)``.

    Multiply by ``t**rho`` to compare against the analytic-semigroup bound
    ``smoothing_bound(rho)``.
    """
    if t <= 0:
        raise PreconditionError("smoothing probe requires t > 0")
    if rho < 0:
        raise PreconditionError("smoothing probe requires rho >= 0")
    lam = model.eigenvalues
    # log-space keeps lambda^rho * exp(-lambda t) finite for large J
    return float(np.exp(np.max(rho * np.log(lam) - lam * t)))


def smoothing_bound(rho: float) -> float:
    """Sharp constant ``sup_{u>0} u^rho e^{-u} = (rho/e)^rho`` (1 at rho = 0)."""
    if rho == 0:
        return 1.0
    return math.exp(rho * (math.log(rho) - 1.0))  # rho/e underflows for tiny rho


class LqNorm(NamedTuple):
    """Result of :func:`semigroup_lq_norm`.

    ``value`` is ``inf`` and ``diverged`` is set when the requested exponent is
    not admissible for the noise regularity.
    """

    value: float
    error: float
    diverged: bool
    converged: bool


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _composite_gauss(fun, breaks: np.ndarray) -> float:
    a, b = breaks[:-1], breaks[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    u = mid[:, None] + half[:, None] * _GAUSS_NODES[None, :]
    vals = fun(u.ravel()).reshape(u.shape)
    return float(np.sum(half * (vals @ _GAUSS_WEIGHTS)))


def _bisect(breaks: np.ndarray) -> np.ndarray:
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    out = np.empty(2 * breaks.size - 1)
    out[0::2] = breaks
    out[1::2] = mids
    return out


def graded_quadrature(
    fun,
    T: float,
    sigma: float,
    panels: int = 64,
    rtol: float = 1e-10,
    max_doublings: int = 6,
) -> tuple[float, float, bool]:
    """Integrate ``fun`` over ``(0, T)`` when ``fun(t) ~ t^{-sigma}`` near 0.

    Uses the substitution ``t = T u^g`` with ``g = 1/(1 - sigma)``, composite
    16-point Gauss-Legendre panels (uniform plus geometric refinement towards
    ``u = 0``) and reports the panel-doubling difference as error estimate.
    Returns ``(value, error, converged)``.
    """
    if not 0 <= sigma < 1:
        raise PreconditionError("graded quadrature needs 0 <= sigma < 1")
    g = 1.0 / (1.0 - sigma)

    def integrand(u):
        return fun(T * u ** g) * T * g * u ** (g - 1.0)

    geometric = 2.0 ** -np.arange(1, 60)
    breaks = np.unique(np.concatenate([np.linspace(0, 1, panels + 1), geometric, [0.0]]))
    value = _composite_gauss(integrand, breaks)
    error = math.inf
    for _ in range(max_doublings):
        breaks = _bisect(breaks)
        refined = _composite_gauss(integrand, breaks)
        error = abs(refined - value)
        value = refined
        if error <= rtol * abs(value):
            return value, error, True
    return value, error, False


def semigroup_lq_norm(model: SpectralModel, noise, q: float, T: float = 1.0) -> LqNorm:
    """``||S||_{L^q([0,T], L_2^0)}`` for the truncated semigroup and noise.

    ``noise`` is a :class:`spdelab.noise.NoiseModel`; its weights are cut to
    ``model.modes``.  The value is only meaningful in the admissible range
    ``q < 2/(1 - beta_max)`` (``q = inf`` needs trace-class noise); outside it a
    divergence flag is returned because the untruncated norm is infinite.
    """
    if q < 2:
        raise PreconditionError("time exponent q must be >= 2")
    beta = noise.beta_max
    lam = model.eigenvalues
    w = noise.weights_for(model.modes)
    if math.isinf(q):
        if not noise.trace_class:
            return LqNorm(math.inf, math.nan, True, False)
        # sup over t of a decreasing function is attained at t = 0
        return LqNorm(float(np.sqrt(np.sum(w))), 0.0, False, True)
    if beta < 1 and q >= 2.0 / (1.0 - beta):
        return LqNorm(math.inf, math.nan, True, False)

    def fun(t):
        s = np.exp(-2.0 * np.outer(t, lam)) @ w
        return s ** (q / 2.0)

    sigma = 0.0 if beta >= 1 else q * (1.0 - beta) / 2.0
    value, err, ok = graded_quadrature(fun, T, min(sigma, 0.95))
    if not ok:
        warnings.warn(
            f"L^q quadrature did not converge, error estimate {err:.3e}",
            QuadratureWarning,
            stacklevel=2,
        )
    norm = value ** (1.0 / q)
    return LqNorm(norm, norm * err / (q * value) if value > 0 else err, False, ok)
