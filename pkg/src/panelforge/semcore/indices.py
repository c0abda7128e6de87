"""Fit indices, nested-model chi-square tests and modification indices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import ModelSpecError, NestingError
from .fitting import FitResult, discrepancy_gradient, information_matrix
from .model import CovarianceModel
from .moments import SampleMoments


def chi_square_p(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variate."""
    if df <= 0:
        raise ModelSpecError("chi-square p-value needs df > 0")
    if x < 0:
        raise ValueError("chi-square statistic must be >= 0")
    return float(stats.chi2.sf(x, df))


def akaike_information(chi_square: float, q: int) -> float:
    """AIC on the chi-square scale: the statistic plus twice the parameter count."""
    return chi_square + 2.0 * q


def _srmr(sigma_hat: np.ndarray, mu_hat: np.ndarray, S: np.ndarray, mean: np.ndarray) -> float:
    """Root mean squared standardized residual over the unique covariance
    elements and the means."""
    p = S.shape[0]
    scale = np.sqrt(np.diag(S))
    total = 0.0
    count = 0
    for i in range(p):
        for j in range(i + 1):
            resid = (S[i, j] - sigma_hat[i, j]) / (scale[i] * scale[j])
            total += resid * resid
            count += 1
    for i in range(p):
        resid = (mean[i] - mu_hat[i]) / scale[i]
        total += resid * resid
        count += 1
    return math.sqrt(total / count)


def _rmsea(chi_square: float, df: int, n: int) -> float:
    return math.sqrt(max(chi_square - df, 0.0) / (df * (n - 1)))


def _cfi(chi_square: float, df: int, base_chi2: float, base_df: int) -> float:
    num = max(chi_square - df, 0.0)
    den = max(base_chi2 - base_df, chi_square - df, 0.0)
    if den == 0.0:
        return 1.0
    return 1.0 - num / den


def _tli(chi_square: float, df: int, base_chi2: float, base_df: int) -> float:
    if df == 0 or base_df == 0:
        raise ModelSpecError("TLI is undefined for df = 0")
    base_ratio = base_chi2 / base_df
    if base_ratio <= 1.0:
        return 1.0
    return (base_ratio - chi_square / df) / (base_ratio - 1.0)


@dataclass(frozen=True)
class FitIndices:
    srmr: float
    rmsea: float
    cfi: float
    tli: float


def fit_indices(fit: FitResult, baseline: FitResult, moments: SampleMoments | None = None) -> FitIndices:
    """SRMR, RMSEA, CFI and TLI of ``fit`` against an independence baseline.

    Raises when the target df is zero (RMSEA and TLI are undefined there).
    """
    moments = moments or fit.moments
    if fit.df == 0:
        raise ModelSpecError("RMSEA/TLI are undefined for a saturated model (df = 0)")
    if baseline.df <= fit.df:
        raise NestingError("baseline model must be more restricted than the fitted model")
    return FitIndices(
        srmr=_srmr(fit.sigma_hat, fit.mu_hat, moments.S, moments.mean),
        rmsea=_rmsea(fit.chi_square, fit.df, fit.n),
        cfi=_cfi(fit.chi_square, fit.df, baseline.chi_square, baseline.df),
        tli=_tli(fit.chi_square, fit.df, baseline.chi_square, baseline.df),
    )


@dataclass(frozen=True)
class DiffTest:
    delta_chi_square: float
    delta_df: int
    p_value: float


def chi_square_diff_test(restricted: FitResult, full: FitResult) -> DiffTest:
    """Likelihood-ratio test of a restricted model against a nesting full model."""
    delta_df = restricted.df - full.df
    if delta_df <= 0:
        raise NestingError(f"restricted model must have larger df (got {restricted.df} vs {full.df})")
    delta = restricted.chi_square - full.chi_square
    if delta < -1e-6:
        raise NestingError(
            f"chi-square decreased by {-delta:.3e} from restricted to full: models are not nested"
        )
    delta = max(delta, 0.0)
    return DiffTest(delta, delta_df, chi_square_p(delta, delta_df))


def lm_test(model: CovarianceModel, fit: FitResult, constraint_id: str) -> float:
    """Modification index: expected chi-square drop from releasing one
    equality tie, from the gradient and expected information at the optimum."""
    released, new_pid = model.release_constraint(constraint_id)
    comp = released.compile()
    values = dict(zip(fit.param_names, fit.theta))
    values[new_pid] = values[new_pid.rpartition("@")[0]]
    theta = comp.pack(values)
    g = discrepancy_gradient(fit.moments, released, theta)
    H = information_matrix(released, theta)
    try:
        direction = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        direction, *_ = np.linalg.lstsq(H, g, rcond=None)
    mi = 0.5 * (fit.n - 1) * float(g @ direction)
    return max(mi, 0.0)


def lm_test_all(model: CovarianceModel, fit: FitResult) -> dict[str, float]:
    """Modification index for every active equality constraint."""
    return {cid: lm_test(model, fit, cid) for cid in model.equality_constraints()}
