"""The covariance-structure engine: implied moments, discrepancy, fitting.

Closed-form oracles: a one-predictor regression has hand-computable implied
moments; the one-variable model has textbook MLEs (mean = sample mean,
variance = sample covariance entry) and standard errors sqrt(s/(n-1)) and
s*sqrt(2/(n-1)).
"""

import math

import numpy as np
import pytest

from panelforge.errors import (
    ConvergenceError,
    IdentificationError,
    ModelSpecError,
    NestingError,
)
from panelforge.semcore import (
    CovarianceModel,
    FitOptions,
    SampleMoments,
    akaike_information,
    chi_square_diff_test,
    chi_square_p,
    classical_moments,
    discrepancy_gradient,
    fit,
    implied_moments,
    ml_discrepancy,
    numerical_gradient,
    saturated_model,
    start_values,
)

from conftest import random_path_model


def regression_model():
    model = CovarianceModel(["x", "y"])
    model.mean("x", param="mx").var("x", param="sx")
    model.mean("y", param="a").var("y", param="ve")
    model.path("y", "x", param="b")
    return model


def test_implied_moments_of_regression():
    model = regression_model()
    theta = {"mx": 2.0, "sx": 1.5, "a": 0.5, "ve": 0.8, "b": 0.6}
    sigma, mu = implied_moments(model, theta)
    assert mu == pytest.approx([2.0, 0.5 + 0.6 * 2.0], abs=1e-14)
    expected = np.array([
        [1.5, 0.6 * 1.5],
        [0.6 * 1.5, 0.6 ** 2 * 1.5 + 0.8],
    ])
    assert np.allclose(sigma, expected, atol=1e-14)


def test_discrepancy_zero_at_sample_moments():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 3)) @ np.diag([1.0, 2.0, 0.5]) + 1.0
    moments = classical_moments(X, ["y0", "y1", "y2"])
    model = saturated_model(["y0", "y1", "y2"])
    theta = {f"mu_y{i}": moments.mean[i] for i in range(3)}
    for i in range(3):
        for j in range(i, 3):
            pid = f"var_y{i}" if i == j else f"cov_y{i}_y{j}"
            theta[pid] = moments.S[i, j]
    assert ml_discrepancy(moments, model, theta) == pytest.approx(0.0, abs=1e-12)


def test_saturated_fit_is_exact():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((80, 3)) + [0.0, 1.0, -1.0]
    moments = classical_moments(X, ["y0", "y1", "y2"])
    result = fit(saturated_model(["y0", "y1", "y2"]), moments)
    assert result.df == 0
    assert result.chi_square == pytest.approx(0.0, abs=1e-7)
    assert result.p_value is None
    assert np.allclose(result.sigma_hat, moments.S, atol=1e-8)


def test_one_variable_closed_form():
    s, mbar, n = 2.5, 1.3, 101
    moments = SampleMoments(np.array([[s]]), np.array([mbar]), n, ("y",))
    model = CovarianceModel(["y"]).mean("y", param="mu").var("y", param="v")
    result = fit(model, moments, options=FitOptions(compute_baseline=False))
    assert result["mu"].value == pytest.approx(mbar, rel=1e-9)
    assert result["v"].value == pytest.approx(s, rel=1e-9)
    assert result["mu"].se == pytest.approx(math.sqrt(s / (n - 1)), rel=1e-6)
    assert result["v"].se == pytest.approx(s * math.sqrt(2 / (n - 1)), rel=1e-6)
    assert result.df == 0


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    for _ in range(5):
        model, theta = random_path_model(rng, k=4)
        order = model.free_params()
        x0 = np.array([theta[p] for p in order])
        S = rng.standard_normal((7, 4))
        moments = SampleMoments(S.T @ S / 6 + 0.5 * np.eye(4),
                                rng.normal(0, 1, 4), 50,
                                tuple(model.observed))
        analytic = discrepancy_gradient(moments, model, x0)
        numeric = numerical_gradient(lambda x: ml_discrepancy(moments, model, x), x0)
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(1.0, np.linalg.norm(analytic))


def test_refit_to_implied_moments_recovers_parameters():
    rng = np.random.default_rng(17)
    model, theta = random_path_model(rng, k=4)
    sigma, mu = implied_moments(model, theta)
    moments = SampleMoments(sigma, mu, 400, tuple(model.observed))
    result = fit(model, moments, options=FitOptions(compute_baseline=False))
    assert result.chi_square == pytest.approx(0.0, abs=1e-8)
    for pid, truth in theta.items():
        assert result[pid].value == pytest.approx(truth, abs=1e-6)


def test_numeric_gradient_fallback_agrees_with_analytic():
    rng = np.random.default_rng(23)
    model, theta = random_path_model(rng, k=3)
    sigma, mu = implied_moments(model, theta)
    sigma = sigma + 0.05 * np.eye(3)  # move the optimum off the start
    moments = SampleMoments(sigma, mu, 200, tuple(model.observed))
    opts = FitOptions(compute_baseline=False)
    a = fit(model, moments, options=opts)
    b = fit(model, moments, options=FitOptions(compute_baseline=False,
                                               use_analytic_gradient=False))
    for pid in model.free_params():
        assert a[pid].value == pytest.approx(b[pid].value, abs=1e-5)


def test_start_values_are_moment_matched():
    model = regression_model()
    rng = np.random.default_rng(31)
    x = rng.normal(2.0, 1.2, 500)
    y = 0.5 + 0.6 * x + rng.normal(0, 0.9, 500)
    moments = classical_moments(np.column_stack([x, y]), ["x", "y"])
    starts = start_values(model, moments)
    assert starts["b"] == pytest.approx(moments.S[0, 1] / moments.S[0, 0], rel=1e-9)
    assert starts["mx"] == pytest.approx(moments.mean[0], rel=1e-9)
    assert starts["sx"] == pytest.approx(moments.S[0, 0], rel=1e-9)


def test_fixed_values_stay_fixed():
    model = CovarianceModel(["x", "y"])
    model.mean("x", param="mx").var("x", param="sx")
    model.mean("y", param="a").var("y", param="ve")
    model.path("y", "x", value=1.0)  # constrained slope
    rng = np.random.default_rng(41)
    x = rng.normal(0, 1, 300)
    y = 0.4 * x + rng.normal(0, 1, 300)
    moments = classical_moments(np.column_stack([x, y]), ["x", "y"])
    result = fit(model, moments, options=FitOptions(compute_baseline=False))
    assert "b" not in result.param_names
    sigma = result.sigma_hat
    # implied covariance carries the fixed unit slope
    assert sigma[0, 1] == pytest.approx(sigma[0, 0], rel=1e-9)


def test_nonconvergence_raises_with_result_attached(d_panel):
    from panelforge.clpm import ClpmSpec, build_model, panel_moments, wide_data

    spec = ClpmSpec()
    moments = panel_moments(d_panel, spec, "classical")
    model = build_model(spec, "D")
    with pytest.raises(ConvergenceError) as err:
        fit(model, moments, options=FitOptions(max_iter=3))
    assert err.value.result is not None
    assert err.value.result.converged is False
    # and the permissive option returns the same partial fit instead
    partial = fit(model, moments, options=FitOptions(max_iter=3, raise_on_nonconvergence=False))
    assert partial.converged is False
    assert partial.n_iterations == 3


def test_unidentified_model_is_rejected():
    model = CovarianceModel(["x", "y"])
    model.mean("x", param="mx").var("x", param="sx")
    model.mean("y", terms=[("a", 1.0), ("b", 1.0)])  # only a + b enters
    model.var("y", param="v")
    moments = SampleMoments(np.diag([1.0, 1.0]), np.array([0.1, 0.3]), 50, ("x", "y"))
    with pytest.raises(IdentificationError):
        fit(model, moments, options=FitOptions(compute_baseline=False))


def test_fit_result_bookkeeping():
    rng = np.random.default_rng(53)
    x = rng.normal(0, 1, 250)
    y = 0.3 * x + rng.normal(0, 1, 250)
    moments = classical_moments(np.column_stack([x, y]), ["x", "y"])
    result = fit(regression_model(), moments)
    p = 2
    assert result.q == 5
    assert result.df == p * (p + 3) // 2 - result.q == 0
    assert result.aic == akaike_information(result.chi_square, result.q)
    assert all(e.se > 0 for e in result.estimates.values())
    assert 0.0 <= result.r_squared["y"] <= 1.0
    d = result.to_dict()
    assert {row["id"] for row in d["parameters"]} == set(result.param_names)


def test_chi_square_diff_test_arithmetic():
    assert chi_square_p(8.460, 3) == pytest.approx(0.0374, abs=0.0005)

    class Stub:
        def __init__(self, chi_square, df):
            self.chi_square, self.df = chi_square, df

    test = chi_square_diff_test(Stub(150.0, 20), Stub(140.0, 17))
    assert test.delta_chi_square == pytest.approx(10.0)
    assert test.delta_df == 3
    assert test.p_value == pytest.approx(chi_square_p(10.0, 3))
    with pytest.raises(NestingError):
        chi_square_diff_test(Stub(140.0, 17), Stub(150.0, 20))


def test_model_validation_errors():
    with pytest.raises(ModelSpecError):
        CovarianceModel(["y", "y"])
    with pytest.raises(ModelSpecError):
        CovarianceModel(["y"]).path("y", "y")
    with pytest.raises(ModelSpecError):
        CovarianceModel(["y"]).mean("z", value=0.0)


def test_model_round_trips_through_json():
    model, theta = random_path_model(np.random.default_rng(61), k=3)
    back = CovarianceModel.from_dict(model.to_dict())
    s1, m1 = implied_moments(model, theta)
    s2, m2 = implied_moments(back, theta)
    assert np.allclose(s1, s2, atol=1e-14) and np.allclose(m1, m2, atol=1e-14)
