"""Imprecise Gaussian load fields on a 1D edge.

The load magnitude along an edge is a Gaussian random field with an
exponential covariance ``sigma^2 exp(-|x1 - x2| / L)`` on ``[-a, a]`` whose
mean and standard deviation are only known to lie in intervals (a
parameterized p-box).  The field is discretized with a truncated
Karhunen-Loeve expansion whose eigenpairs are known in closed form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import InvalidInputError, NumericalError

SINE = "sin"
COSINE = "cos"

_ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class PBox:
    """Interval mean and interval standard deviation of the load field."""

    mu_lo: float
    mu_hi: float
    sigma_lo: float
    sigma_hi: float
    ci_level: float | None = None
    n_samples: int | None = None

    def __post_init__(self):
        vals = (self.mu_lo, self.mu_hi, self.sigma_lo, self.sigma_hi)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"p-box bounds must be finite, got {vals}")
        if self.mu_lo > self.mu_hi:
            raise InvalidInputError(f"mu_lo={self.mu_lo} > mu_hi={self.mu_hi}")
        if not 0.0 <= self.sigma_lo <= self.sigma_hi:
            raise InvalidInputError(
                f"need 0 <= sigma_lo <= sigma_hi, got [{self.sigma_lo}, {self.sigma_hi}]")
        if self.ci_level is not None and not 0.0 < self.ci_level < 1.0:
            raise InvalidInputError(f"ci_level must lie in (0, 1), got {self.ci_level}")

    @classmethod
    def point(cls, mu: float, sigma: float) -> "PBox":
        return cls(mu, mu, sigma, sigma)

    @property
    def mu_mid(self) -> float:
        return 0.5 * (self.mu_lo + self.mu_hi)

    @property
    def sigma_mid(self) -> float:
        return 0.5 * (self.sigma_lo + self.sigma_hi)

    @property
    def straddles_zero(self) -> bool:
        """True when the mean interval contains zero."""
        return self.mu_lo <= 0.0 <= self.mu_hi

    def contains(self, other: "PBox") -> bool:
        return (self.mu_lo <= other.mu_lo and other.mu_hi <= self.mu_hi
                and self.sigma_lo <= other.sigma_lo and other.sigma_hi <= self.sigma_hi)


def pbox_from_stats(mean: float, std: float, n: int, ci_level: float) -> PBox:
    """Build a p-box from summary statistics of ``n`` observations.

    The mean interval is the normal-theory ``mean +- z * s / sqrt(n)``; the
    standard-deviation interval is the chi-square interval with ``n - 1``
    degrees of freedom.
    """
    if n < 3:
        raise InvalidInputError(f"need at least 3 samples, got {n}")
    if not 0.0 < ci_level < 1.0:
        raise InvalidInputError(f"ci_level must lie in (0, 1), got {ci_level}")
    if std < 0:
        raise InvalidInputError(f"std must be non-negative, got {std}")
    alpha = 1.0 - ci_level
    half = stats.norm.ppf(1.0 - alpha / 2.0) * std / math.sqrt(n)
    dof = n - 1
    chi_upper = stats.chi2.ppf(1.0 - alpha / 2.0, dof)
    chi_lower = stats.chi2.ppf(alpha / 2.0, dof)
    s_lo = std * math.sqrt(dof / chi_upper)
    s_hi = std * math.sqrt(dof / chi_lower)
    return PBox(float(mean - half), float(mean + half), float(s_lo), float(s_hi),
                ci_level=ci_level, n_samples=n)


def pbox_from_samples(samples: Sequence[float], ci_level: float) -> PBox:
    """Confidence-interval p-box from raw scalar load observations."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 3:
        raise InvalidInputError(f"need at least 3 samples, got {x.size}")
    std = float(np.std(x, ddof=1))
    if std == 0.0:
        warnings.warn("samples have zero variance; sigma interval collapses to [0, 0]",
                      RuntimeWarning, stacklevel=2)
    return pbox_from_stats(float(np.mean(x)), std, x.size, ci_level)


@dataclass(frozen=True)
class ExponentialKernel:
    """``sigma^2 * exp(-|x1 - x2| / L)`` on the interval ``[-a, a]``."""

    sigma: float
    L: float
    a: float

    def __post_init__(self):
        if self.L <= 0 or self.a <= 0 or self.sigma < 0:
            raise InvalidInputError(
                f"need L > 0, a > 0, sigma >= 0; got L={self.L}, a={self.a}, sigma={self.sigma}")

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return self.sigma ** 2 * np.exp(-np.abs(x1 - x2) / self.L)

    @property
    def trace(self) -> float:
        """Integral of the variance over the domain, ``2 a sigma^2``."""
        return 2.0 * self.a * self.sigma ** 2


def _bisect(g, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # vectorized bisection; g(lo) and g(hi) have opposite signs elementwise
    lo = lo.copy()
    hi = hi.copy()
    g_lo = np.sign(g(lo))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = np.sign(g(mid))
        left = g_mid == g_lo
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= _ROOT_RTOL * hi):
            break
    return 0.5 * (lo + hi)


def kl_family_roots(a: float, L: float, n: int, family: str) -> np.ndarray:
    """First ``n`` positive roots of one transcendental family.

    ``family="cos"`` solves ``tan(w a) = 1 / (w L)``; each root lies in
    ``(k pi, k pi + pi/2) / a``.  ``family="sin"`` solves
    ``tan(w a) / (w L) + 1 = 0``; each root lies in ``(k pi + pi/2, (k+1) pi) / a``.
    Both are rewritten without the tangent poles before bisection.
    """
    if a <= 0 or L <= 0:
        raise InvalidInputError(f"need a > 0 and L > 0, got a={a}, L={L}")
    k = np.arange(n, dtype=float)
    if family == COSINE:
        lo = k * np.pi / a
        hi = (k * np.pi + np.pi / 2) / a
        def g(w):
            return w * L * np.sin(w * a) - np.cos(w * a)
    elif family == SINE:
        lo = (k * np.pi + np.pi / 2) / a
        hi = (k + 1) * np.pi / a
        def g(w):
            return np.sin(w * a) + w * L * np.cos(w * a)
    else:
        raise InvalidInputError(f"unknown family {family!r}")
    return _bisect(g, lo, hi)


def _merged_roots(a: float, L: float, M: int) -> tuple[np.ndarray, np.ndarray]:
    cos_roots = kl_family_roots(a, L, M, COSINE)
    sin_roots = kl_family_roots(a, L, M, SINE)
    freqs = np.concatenate([cos_roots, sin_roots])
    parity = np.array([COSINE] * M + [SINE] * M)
    order = np.argsort(freqs, kind="stable")[:M]
    return freqs[order], parity[order]


def kl_frequencies(a: float, L: float, M: int) -> np.ndarray:
    """The ``M`` smallest frequencies of both families, ascending."""
    if M < 1:
        raise InvalidInputError(f"M must be >= 1, got {M}")
    return _merged_roots(a, L, M)[0]


@dataclass(frozen=True)
class KLBasis:
    """Truncated analytic Karhunen-Loeve eigenpairs of an exponential kernel."""

    freqs: np.ndarray
    lambdas: np.ndarray
    parity: np.ndarray
    a: float
    L: float
    sigma: float
    energy_fraction: float = field(default=float("nan"))

    @property
    def M(self) -> int:
        return int(self.freqs.size)

    @property
    def trace(self) -> float:
        return 2.0 * self.a * self.sigma ** 2

    def eigenfunctions(self, xs) -> np.ndarray:
        """Evaluate all eigenfunctions; returns an ``(M, len(xs))`` array."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        w = self.freqs[:, None]
        is_sin = (self.parity == SINE)[:, None]
        sin_norm = np.sqrt(self.a - np.sin(2 * w * self.a) / (2 * w))
        cos_norm = np.sqrt(self.a + np.sin(2 * w * self.a) / (2 * w))
        return np.where(is_sin, np.sin(w * xs) / sin_norm, np.cos(w * xs) / cos_norm)

    def scaled(self, sigma: float) -> "KLBasis":
        """Same eigenfunctions for a kernel with a different std-dev."""
        if self.sigma == 0:
            raise InvalidInputError("cannot rescale a zero-variance basis")
        return replace(self, lambdas=self.lambdas * (sigma / self.sigma) ** 2, sigma=sigma)


def eval_eigenfunction(basis: KLBasis, i: int, xs) -> np.ndarray:
    """Eigenfunction ``i`` (0-based, descending eigenvalue order) at ``xs``."""
    if not 0 <= i < basis.M:
        raise InvalidInputError(f"eigenfunction index {i} outside [0, {basis.M})")
    sub = KLBasis(basis.freqs[i:i + 1], basis.lambdas[i:i + 1], basis.parity[i:i + 1],
                  basis.a, basis.L, basis.sigma)
    return sub.eigenfunctions(xs)[0]


def kl_basis(kernel: ExponentialKernel, M: int) -> KLBasis:
    """Closed-form eigenpairs, sorted by descending eigenvalue.

    ``lambda_i = 2 sigma^2 L / (1 + w_i^2 L^2)``.
    """
    if M < 1:
        raise InvalidInputError(f"M must be >= 1, got {M}")
    freqs, parity = _merged_roots(kernel.a, kernel.L, M)
    lambdas = 2.0 * kernel.sigma ** 2 * kernel.L / (1.0 + (freqs * kernel.L) ** 2)
    frac = float(lambdas.sum() / kernel.trace) if kernel.sigma > 0 else float("nan")
    return KLBasis(freqs, lambdas, parity, kernel.a, kernel.L, kernel.sigma, frac)


@dataclass(frozen=True)
class NystromResult:
    lambdas: np.ndarray
    eigvecs: np.ndarray  # (n_quad, M), columns L2-normalized as functions
    xs: np.ndarray
    weight: float
    trace: float  # sum of the full discrete spectrum


def nystrom_eigenpairs(kernel: ExponentialKernel, n_quad: int, M: int) -> NystromResult:
    """Numerical eigenpairs of the covariance operator on a midpoint grid.

    Used as an independent check of :func:`kl_basis`.
    """
    if M < 1 or n_quad < 10 * M:
        raise InvalidInputError(f"need n_quad >= 10*M, got n_quad={n_quad}, M={M}")
    h = 2.0 * kernel.a / n_quad
    xs = -kernel.a + h * (np.arange(n_quad) + 0.5)
    K = kernel(xs[:, None], xs[None, :]) * h
    try:
        vals, vecs = scipy.linalg.eigh(K, subset_by_index=[n_quad - M, n_quad - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Nystrom eigen-solve failed: {exc}") from exc
    vals = vals[::-1]
    vecs = vecs[:, ::-1] / math.sqrt(h)
    return NystromResult(vals, vecs, xs, h, float(np.trace(K)))


def significance_order(lambdas_full, s0: float, trace: float) -> int:
    """Smallest ``M`` whose cumulative eigenvalue share of ``trace`` reaches ``s0``."""
    if not 0.0 < s0 <= 1.0:
        raise InvalidInputError(f"s0 must lie in (0, 1], got {s0}")
    lam = np.asarray(lambdas_full, dtype=float)
    if lam.size == 0 or trace <= 0:
        raise InvalidInputError("need a non-empty eigenvalue list and positive trace")
    share = np.cumsum(lam) / trace
    hit = np.nonzero(share >= s0)[0]
    if hit.size == 0:
        warnings.warn(f"threshold s0={s0} not reached with {lam.size} eigenvalues "
                      f"(share {share[-1]:.4f}); using all of them",
                      RuntimeWarning, stacklevel=2)
        return int(lam.size)
    return int(hit[0] + 1)


def kl_basis_by_significance(kernel: ExponentialKernel, s0: float,
                             max_terms: int = 4096) -> KLBasis:
    """Truncated basis with the order picked by :func:`significance_order`."""
    n = 16
    while True:
        full = kl_basis(ExponentialKernel(1.0, kernel.L, kernel.a), n)
        share = full.lambdas.sum() / full.trace
        if share >= s0 or n >= max_terms:
            break
        n *= 2
    M = significance_order(full.lambdas, s0, full.trace)
    return kl_basis(kernel, M)


@dataclass(frozen=True)
class FieldRealization:
    xs: np.ndarray
    values: np.ndarray
    xi: np.ndarray


def realize_field(basis: KLBasis, mu: float, xi, xs) -> FieldRealization:
    """``mu + sum_i sqrt(lambda_i) psi_i(x) xi_i``.

    ``xi`` may be a single coefficient vector of length ``M`` or an
    ``(n, M)`` batch, in which case ``values`` is ``(n, len(xs))``.
    """
    xi = np.asarray(xi, dtype=float)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xi.shape[-1] != basis.M:
        raise InvalidInputError(f"expected {basis.M} coefficients, got {xi.shape[-1]}")
    tol = 1e-12 * basis.a
    if np.any(xs < -basis.a - tol) or np.any(xs > basis.a + tol):
        raise InvalidInputError(f"coordinates must lie in [-{basis.a}, {basis.a}]")
    modes = np.sqrt(basis.lambdas)[:, None] * basis.eigenfunctions(xs)
    return FieldRealization(xs, mu + xi @ modes, xi)


def mercer_covariance(basis: KLBasis, x1, x2) -> np.ndarray:
    """Truncated covariance ``sum_i lambda_i psi_i(x1) psi_i(x2)``."""
    p1 = basis.eigenfunctions(x1)
    p2 = basis.eigenfunctions(x2)
    return np.einsum("i,ij,ik->jk", basis.lambdas, p1, p2)
