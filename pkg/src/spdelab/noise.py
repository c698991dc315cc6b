"""Q-Wiener noise diagonal in the sine basis, and reproducible increments.

The covariance has eigenvalues ``q_j = j**-alpha`` on ``e_j``.  The regularity
index ``beta`` is the largest value for which ``A^{(beta-1)/2} Q^{1/2}`` is
Hilbert-Schmidt, capped at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import zeta

from .errors import DivergenceError, PreconditionError
from .rng import standard_normals
from .spectral import dirichlet_eigenvalues

__all__ = [
    "NoiseModel",
    "IncrementStream",
    "admissible_beta",
    "series_converges",
    "weighted_hs_norm",
    "increments",
]

NOISE_STREAM = 1


def admissible_beta(alpha: float) -> float:
    """``min(1, (1 + alpha)/2)``: the supremum of admissible ``beta``."""
    if alpha < 0:
        raise PreconditionError("noise decay alpha must be >= 0")
    return min(1.0, (1.0 + alpha) / 2.0)


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal covariance ``q_j = j**-alpha`` truncated to ``modes`` terms."""

    alpha: float = 0.0
    modes: int = 256

    def __post_init__(self):
        if self.alpha < 0:
            raise PreconditionError("noise decay alpha must be >= 0")
        if self.modes < 1:
            raise PreconditionError("noise mode count must be >= 1")

    @property
    def beta_max(self) -> float:
        return admissible_beta(self.alpha)

    @property
    def trace_class(self) -> bool:
        return self.alpha > 1

    @property
    def weights(self) -> np.ndarray:
        return self.weights_for(self.modes)

    def weights_for(self, J: int) -> np.ndarray:
        return np.arange(1, J + 1, dtype=float) ** -self.alpha

    def second_moment_tail(self, J: int | None = None) -> float:
        """Stationary variance carried by the discarded modes,
        ``sum_{j>J} q_j / (2 lambda_j)``."""
        J = self.modes if J is None else J
        return float(zeta(2.0 + self.alpha, J + 1) / (2.0 * np.pi**2))


def _weighted_partial_sum(alpha, beta, J):
    lam = dirichlet_eigenvalues(J)
    j = np.arange(1, J + 1, dtype=float)
    return np.cumsum(lam ** (beta - 1.0) * j**-alpha)


def series_converges(alpha: float, beta: float, J: int = 100_000) -> bool:
    """Numerical convergence test for ``sum_j lambda_j^(beta-1) q_j``.

    The summand is a power law, so the ratio of the partial-sum increments
    over ``(J/10, J]`` and ``(J/100, J/10]`` is below one exactly when the
    series converges.  Purely empirical: no closed-form exponent is used.
    """
    s = _weighted_partial_sum(alpha, beta, J)
    a, b, c = s[J // 100 - 1], s[J // 10 - 1], s[J - 1]
    return (c - b) / (b - a) < 1.0


class HSNorm(NamedTuple):
    value: float
    tail_bound: float


def weighted_hs_norm(noise: NoiseModel, beta: float) -> HSNorm:
    """``||A^{(beta-1)/2} Q^{1/2}||_HS`` over the first ``noise.modes`` modes.

    The tail bound uses an integral comparison for the discarded squared terms,
    and is returned for the norm itself (first-order in the squared tail).
    """
    bmax = noise.beta_max
    allowed = beta < bmax or (beta == 1.0 and noise.alpha > 1.0)
    if not allowed:
        raise DivergenceError(
            f"beta must be < beta_max = {bmax:g} for alpha = {noise.alpha:g}"
            " (otherwise the weighted noise norm is infinite)"
        )
    J = noise.modes
    s = _weighted_partial_sum(noise.alpha, beta, J)[-1]
    p = 2.0 + noise.alpha - 2.0 * beta
    tail_sq = np.pi ** (2.0 * beta - 2.0) * J ** (1.0 - p) / (p - 1.0)
    value = math.sqrt(s)
    return HSNorm(value, math.sqrt(s + tail_sq) - value)


def _is_pow2(m):
    return m > 0 and m & (m - 1) == 0


def _coarsen(fine, m):
    """Sum consecutive groups of ``m`` rows along axis -2.

    Dyadic ``m`` uses repeated pairwise halving, so every dyadic level is
    exactly the sum of two increments of the level below.
    """
    if m == 1:
        return fine
    if _is_pow2(m):
        x = fine
        while m > 1:
            x = x[..., 0::2, :] + x[..., 1::2, :]
            m //= 2
        return x
    shape = fine.shape[:-2] + (fine.shape[-2] // m, m, fine.shape[-1])
    grouped = fine.reshape(shape)
    acc = grouped[..., 0, :].copy()
    for r in range(1, m):
        acc += grouped[..., r, :]
    return acc


@dataclass(frozen=True)
class IncrementStream:
    """Refinement-consistent Wiener increments on a dyadic time grid.

    Parameters
    ----------
    noise : NoiseModel
    seed : int
    fine_steps : int
        Number of finest-level steps ``N_f`` on ``[0, T]``.
    T : float
    """

    noise: NoiseModel
    seed: int
    fine_steps: int
    T: float = 1.0

    @property
    def fine_dt(self) -> float:
        return self.T / self.fine_steps

    def _level(self, m):
        if m < 1 or self.fine_steps % m:
            raise PreconditionError(
                f"level m={m} must divide the finest step count {self.fine_steps}"
            )
        return self.fine_steps // m

    def fine_normals(self, samples, n=None) -> np.ndarray:
        """Raw ``N(0, 1)`` draws, shape ``(len(samples), len(n), modes)``."""
        n = np.arange(self.fine_steps) if n is None else np.asarray(n)
        return standard_normals(self.seed, samples, n, self.noise.modes, NOISE_STREAM)

    def block(self, samples, m: int = 1) -> np.ndarray:
        """All increments at step ``m * fine_dt``; shape ``(S, N_f/m, modes)``."""
        self._level(m)
        scale = np.sqrt(self.noise.weights * self.fine_dt)
        fine = self.fine_normals(np.atleast_1d(samples)) * scale
        return _coarsen(fine, m)

    def increments(self, sample: int, m: int, n: int) -> np.ndarray:
        """Increment ``n`` at level ``m``, as a vector over modes."""
        count = self._level(m)
        if not 0 <= n < count:
            raise PreconditionError(f"step index n={n} outside [0, {count})")
        scale = np.sqrt(self.noise.weights * self.fine_dt)
        fine = self.fine_normals([sample], np.arange(n * m, (n + 1) * m)) * scale
        return _coarsen(fine, m)[0, 0]


def increments(noise, seed, sample, m, n, fine_steps, T=1.0):
    """Functional form of :meth:`IncrementStream.increments`."""
    return IncrementStream(noise, seed, fine_steps, T).increments(sample, m, n)
