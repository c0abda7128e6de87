"""Fit indices and modification (score) tests."""

import math

import numpy as np
import pytest
from scipy import stats

from panelforge.errors import ModelSpecError
from panelforge.semcore import (
    CovarianceModel,
    FitOptions,
    akaike_information,
    chi_square_p,
    fit,
    fit_indices,
    implied_moments,
    lm_test,
    lm_test_all,
    SampleMoments,
)
from panelforge.semcore import independence_model

from conftest import random_path_model


def test_chi_square_tail_values():
    assert chi_square_p(8.460, 3) == pytest.approx(0.0374, abs=0.0005)
    assert chi_square_p(18.909, 3) == pytest.approx(0.0003, abs=0.0002)
    assert chi_square_p(0.0, 5) == 1.0
    with pytest.raises(ModelSpecError):
        chi_square_p(1.0, 0)
    with pytest.raises(ValueError):
        chi_square_p(-1.0, 3)


def test_aic_is_chi_square_plus_twice_q():
    assert akaike_information(13007.867, 133) == pytest.approx(13273.867, abs=1e-9)
    assert akaike_information(16617.517, 127) == pytest.approx(16871.517, abs=1e-9)
    assert akaike_information(0.0, 10) == 20.0


@pytest.fixture()
def misfit_pair():
    """A restricted model fit to moments it cannot reproduce, plus baseline."""
    rng = np.random.default_rng(73)
    model, theta = random_path_model(rng, k=3)
    sigma, mu = implied_moments(model, theta)
    # perturb one covariance so the model has genuine misfit
    sigma = sigma.copy()
    sigma[0, 2] = sigma[2, 0] = sigma[0, 2] + 0.4
    sigma += 0.2 * np.eye(3)
    moments = SampleMoments(sigma, mu, 300, tuple(model.observed))
    target = fit(model, moments, options=FitOptions(raise_on_nonconvergence=False))
    baseline = fit(independence_model(list(model.observed)), moments,
                   options=FitOptions(compute_baseline=False,
                                      raise_on_nonconvergence=False))
    return target, baseline, moments


def test_index_formulas(misfit_pair):
    target, baseline, moments = misfit_pair
    idx = fit_indices(target, baseline, moments)
    n, chi2, df = target.n, target.chi_square, target.df
    assert idx.rmsea == pytest.approx(
        math.sqrt(max(chi2 - df, 0.0) / (df * (n - 1))), abs=1e-12)
    expected_cfi = 1.0 - max(chi2 - df, 0.0) / max(
        baseline.chi_square - baseline.df, chi2 - df, 0.0)
    assert idx.cfi == pytest.approx(expected_cfi, abs=1e-12)
    base_ratio = baseline.chi_square / baseline.df
    assert idx.tli == pytest.approx(
        (base_ratio - chi2 / df) / (base_ratio - 1.0), abs=1e-12)
    assert 0.0 <= idx.srmr < 1.0


def test_srmr_is_zero_for_perfect_fit():
    rng = np.random.default_rng(79)
    model, theta = random_path_model(rng, k=3)
    sigma, mu = implied_moments(model, theta)
    moments = SampleMoments(sigma, mu, 300, tuple(model.observed))
    result = fit(model, moments, options=FitOptions(compute_baseline=False))
    from panelforge.semcore.indices import _srmr
    assert _srmr(result.sigma_hat, result.mu_hat, sigma, mu) == pytest.approx(0.0, abs=1e-7)


def test_indices_reject_saturated_target(misfit_pair):
    target, baseline, moments = misfit_pair
    from panelforge.semcore import saturated_model
    sat = fit(saturated_model(list(moments.var_names)), moments,
              options=FitOptions(compute_baseline=False))
    with pytest.raises(ModelSpecError):
        fit_indices(sat, baseline, moments)


def test_lm_test_flags_the_binding_constraint(d_comparison):
    """Freeing a genuinely wrong equality should produce a large score statistic."""
    from panelforge.clpm import ClpmSpec, build_model

    fit_a = d_comparison["A"]
    model = build_model(ClpmSpec(), "A")
    scores = lm_test_all(model, fit_a)
    assert scores, "no equality constraints reported"
    top = max(scores.values())
    # under a misspecified Model A some tie must be under visible stress
    assert top > 1.0
    cid, value = max(scores.items(), key=lambda kv: kv[1])
    assert lm_test(model, fit_a, cid) == pytest.approx(value, rel=1e-9)
