"""Statistical moments of the quadratic-form compliance ``c = xi^T C xi``.

``xi`` collects ``M + 1`` independent standard normal coefficients, the
first multiplying the mean-load case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

ISSERLIS_FULL = "isserlis-full"
DIAGONAL_FREE = "diagonal-free"
VARIANCE_MODES = (ISSERLIS_FULL, DIAGONAL_FREE)
# older spelling of the diagonal-free mode, still accepted
MODE_ALIASES = {"paper-eq26": DIAGONAL_FREE}


def check_mode(mode: str) -> str:
    """Return the canonical name of ``mode``, raising on unknown modes."""
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in VARIANCE_MODES:
        raise InvalidInputError(f"unknown variance mode {mode!r}; expected one of {VARIANCE_MODES}")
    return mode


@dataclass(frozen=True)
class MomentResult:
    mean: float
    variance: float
    mode: str = ISSERLIS_FULL

    @property
    def std_dev(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class ObjectiveParams:
    beta: float = 1.0
    w1: float = 1.0
    w2: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")
        if self.w1 < 0 or self.w2 < 0 or abs(self.w1 + self.w2 - 1.0) > 1e-12:
            raise InvalidInputError(
                f"bound weights must be non-negative and sum to 1, got w1={self.w1}, w2={self.w2}")


def fourth_moment(i: int, j: int, k: int, l: int, sigmas) -> float:
    """``E[xi_i xi_j xi_k xi_l]`` for independent zero-mean Gaussians."""
    s = np.asarray(sigmas, dtype=float)
    if i == j == k == l:
        return 3.0 * s[i] ** 4
    if (i == k and j == l) or (i == l and j == k):
        return float(s[i] ** 2 * s[j] ** 2)
    if i == j and k == l:
        return float(s[i] ** 2 * s[k] ** 2)
    return 0.0


def mean_compliance(C: np.ndarray) -> float:
    return float(np.trace(C))


def variance_compliance(C: np.ndarray, mode: str = ISSERLIS_FULL) -> float:
    """Variance of ``xi^T C xi`` for symmetric ``C``.

    ``isserlis-full`` is the exact Gaussian result ``2 sum_ij c_ij^2``;
    ``diagonal-free`` drops the diagonal and returns ``2 sum_{i != j} c_ij^2``.
    """
    mode = check_mode(mode)
    C = np.asarray(C, dtype=float)
    total = float(np.sum(C * C))
    if mode == DIAGONAL_FREE:
        total -= float(np.sum(np.diag(C) ** 2))
    return 2.0 * max(total, 0.0)


def compliance_moments(C: np.ndarray, mode: str = ISSERLIS_FULL) -> MomentResult:
    return MomentResult(mean_compliance(C), variance_compliance(C, mode), mode)


def objective(mean: float, std_dev: float, beta: float) -> float:
    """Robust objective ``mean + beta * std_dev``."""
    if std_dev < 0:
        raise InvalidInputError(f"std_dev must be non-negative, got {std_dev}")
    return mean + beta * std_dev


def mc_compliance_oracle(C: np.ndarray, n: int, seed, block: int = 100_000):
    """Sample ``xi^T C xi`` directly.

    Draws are made block by block from one generator so the stream depends
    only on ``seed`` and ``n``.  Returns ``(mean, variance, samples)`` with
    the unbiased sample variance.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    C = np.asarray(C, dtype=float)
    rng = np.random.default_rng(seed)
    out = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        xi = rng.standard_normal((stop - start, C.shape[0]))
        out[start:stop] = np.einsum("ni,ij,nj->n", xi, C, xi)
    var = float(np.var(out, ddof=1)) if n > 1 else 0.0
    return float(np.mean(out)), var, out
