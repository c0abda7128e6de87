"""First and second sample moments, classical and outlier-robust."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from ..errors import InputError, NotPositiveDefiniteError


@dataclass
class SampleMoments:
    """Covariance matrix, mean vector and sample size of one dataset."""

    S: np.ndarray
    mean: np.ndarray
    n: int
    var_names: tuple[str, ...] | None = None
    provenance: str = "classical"
    _logdet_S: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        p = self.S.shape[0]
        if self.S.shape != (p, p) or self.mean.shape != (p,):
            raise InputError("moment shapes do not match")
        if not np.allclose(self.S, self.S.T, atol=1e-12):
            raise InputError("covariance matrix is not symmetric")
        self.S = (self.S + self.S.T) / 2.0
        if self.n < p + 1:
            raise InputError(f"need at least p+1 = {p + 1} observations, got {self.n}")
        if self.var_names is not None:
            self.var_names = tuple(self.var_names)
            if len(self.var_names) != p:
                raise InputError("var_names length does not match S")

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @property
    def logdet_S(self) -> float:
        if self._logdet_S is None:
            sign, val = np.linalg.slogdet(self.S)
            if sign <= 0:
                raise NotPositiveDefiniteError("sample covariance matrix is singular")
            self._logdet_S = float(val)
        return self._logdet_S


def classical_moments(X: np.ndarray, var_names=None) -> SampleMoments:
    """Sample mean and covariance (denominator n - 1)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    mean = X.mean(axis=0)
    centered = X - mean
    S = centered.T @ centered / (n - 1)
    return SampleMoments(S, mean, n, var_names, "classical")


def huber_consistency(p: int, r0: float) -> float:
    """E[min(chi2_p, r0^2)] / p, the rescaling that keeps the weighted
    covariance consistent under normality."""
    if math.isinf(r0):
        return 1.0
    a = r0 * r0
    return float(p * stats.chi2.cdf(a, p + 2) + a * stats.chi2.sf(a, p)) / p


def robust_moments(
    X: np.ndarray,
    var_names=None,
    *,
    r0: float | None = None,
    quantile: float = 0.95,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> SampleMoments:
    """Huber-weighted mean and covariance (two-stage robust procedure, stage 1).

    Each case gets weight ``min(1, r0 / d_i)`` from its Mahalanobis distance
    ``d_i``; means use the weights, the covariance the squared weights with a
    consistency rescaling. By default ``r0`` is the square root of the
    chi-square 95th percentile. ``r0 = inf`` forces unit weights and returns
    the classical moments exactly.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if r0 is None:
        r0 = math.sqrt(stats.chi2.ppf(quantile, p))
    if math.isinf(r0):
        out = classical_moments(X, var_names)
        out.provenance = "robust"
        return out
    kappa = huber_consistency(p, r0)

    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    for _ in range(max_iter):
        try:
            chol = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("weighted covariance became singular") from exc
        centered = X - mean
        d2 = np.einsum("ij,ij->i", centered, cho_solve(chol, centered.T).T)
        d = np.sqrt(np.maximum(d2, 1e-300))
        w = np.minimum(1.0, r0 / d)
        new_mean = (w[:, None] * X).sum(axis=0) / w.sum()
        centered = X - new_mean
        cov = (w[:, None] ** 2 * centered).T @ centered / ((n - 1) * kappa)
        shift = float(np.max(np.abs(new_mean - mean)))
        mean = new_mean
        if shift < tol:
            break
    return SampleMoments(cov, mean, n, var_names, "robust")
