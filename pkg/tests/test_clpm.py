"""Model variants: structure, invariants and comparison machinery.

Free-parameter differences between variants are structural facts
(cross-lag blocks of 3 coefficients each) and are asserted exactly.
"""

import warnings

import numpy as np
import pytest

from panelforge.clpm import (
    CORE_PROCESSES,
    VARIANTS,
    ClpmSpec,
    VariantComparison,
    build_model,
    coefficient_table,
    cross_paths,
    fit_variants,
    panel_moments,
    structural_param_ids,
    wide_data,
)
from panelforge.errors import ModelSpecError
from panelforge.panel import PanelDataset
from panelforge.semcore import FitOptions
from panelforge.synth import default_true_parameters, simulate_panel


def test_spec_defaults():
    spec = ClpmSpec()
    assert spec.waves == 4
    assert spec.processes == ("fss", "ci", "ced", "cef", "rank")
    assert spec.propensities == ("ci", "ced", "cef")
    assert not spec.include_c


def test_spec_needs_three_waves():
    with pytest.raises(ModelSpecError):
        ClpmSpec(waves=2)
    ClpmSpec(waves=3)  # fine


def test_including_overall_collaboration_warns():
    with pytest.warns(UserWarning):
        ClpmSpec(include_c=True)


def test_observed_names_order():
    names = ClpmSpec().observed_names()
    assert names[:2] == ("cohort", "gender")
    assert "fss_1" in names and "rank_4" in names
    assert len(names) == 22


def test_endogenous_waves():
    spec = ClpmSpec()
    assert spec.endogenous_waves("fss") == (2, 3, 4)
    assert spec.endogenous_waves("ci") == (2, 3, 4)
    # the rank equation needs two lags of the productivity score
    assert spec.endogenous_waves("rank") == (3, 4)


def test_cross_path_blocks():
    spec = ClpmSpec()
    assert cross_paths(spec, "A") == ()
    to_fss = {("fss", p) for p in ("ci", "ced", "cef")}
    from_fss = {(p, "fss") for p in ("ci", "ced", "cef")}
    assert set(cross_paths(spec, "B")) == to_fss
    assert set(cross_paths(spec, "C")) == from_fss
    assert set(cross_paths(spec, "D")) == to_fss | from_fss
    with pytest.raises(ModelSpecError):
        cross_paths(spec, "E")


def test_free_parameter_counts_and_df_differences():
    spec = ClpmSpec()
    q = {v: len(build_model(spec, v).free_params()) for v in VARIANTS}
    assert q == {"A": 131, "B": 134, "C": 134, "D": 137}
    assert q["D"] - q["A"] == 6
    assert q["B"] - q["A"] == 3
    assert q["C"] - q["A"] == 3
    # identical observed block, so df differences mirror q differences
    p = len(spec.observed_names())
    df = {v: p * (p + 3) // 2 - q[v] for v in VARIANTS}
    assert df["A"] - df["D"] == 6
    assert df["B"] - df["D"] == 3
    assert df["C"] - df["D"] == 3


def test_structural_ids_cover_every_equation():
    spec = ClpmSpec()
    ids = structural_param_ids(spec, "D")
    assert "b_fss_fss" in ids
    assert "b_rank_fss2" in ids
    assert "b_ci_gender" in ids
    # variant A omits the cross blocks
    ids_a = structural_param_ids(spec, "A")
    assert "b_fss_ci" not in ids_a
    assert "b_ci_fss" not in ids_a


def test_wide_data_requires_matching_waves(d_panel):
    spec = ClpmSpec(waves=3)
    with pytest.raises(ModelSpecError):
        wide_data(d_panel, spec)


def test_wide_data_matches_panel_layout(d_panel):
    spec = ClpmSpec()
    moments_names = wide_data(d_panel, spec)[1]
    assert tuple(moments_names) == spec.observed_names()


def test_moments_modes(d_panel):
    spec = ClpmSpec()
    classical = panel_moments(d_panel, spec, "classical")
    robust = panel_moments(d_panel, spec, "robust")
    assert classical.provenance == "classical"
    assert robust.provenance == "robust"
    assert not np.array_equal(classical.S, robust.S)
    with pytest.raises(ModelSpecError):
        panel_moments(d_panel, spec, "winsorized")


def test_variant_fits_are_consistent(d_comparison):
    fits = d_comparison.fits
    assert set(fits) == {"A", "B", "C", "D"}
    assert all(f.converged for f in fits.values())
    # nesting: each restriction can only fit worse, up to optimizer slack
    assert fits["A"].chi_square >= fits["B"].chi_square - 1e-4
    assert fits["A"].chi_square >= fits["C"].chi_square - 1e-4
    assert fits["B"].chi_square >= fits["D"].chi_square - 1e-4
    assert fits["C"].chi_square >= fits["D"].chi_square - 1e-4
    assert fits["A"].df - fits["D"].df == 6


def test_selection_recovers_generating_variant(d_comparison):
    assert d_comparison.selected == "D"
    assert set(d_comparison.tests) == {"A", "B", "C"}
    # the bidirectional truth makes the one-directional restrictions reject
    assert d_comparison.tests["A"].p_value < 0.05
    assert d_comparison.tests["B"].p_value < 0.05


def test_estimates_close_to_truth(d_comparison):
    true = default_true_parameters("D")
    fit_d = d_comparison["D"]
    checked = 0
    misses = 0
    for pid in structural_param_ids(d_comparison.spec, "D"):
        truth = true.param_value(pid)
        if truth is None:
            continue
        est = fit_d[pid]
        checked += 1
        if abs(est.value - truth) > 3.0 * est.se:
            misses += 1
    assert checked >= 25
    assert misses <= max(1, int(0.05 * checked))


def test_time_invariance_release_cannot_worsen_fit(d_panel):
    tied = fit_variants(d_panel, ClpmSpec(), variants=("D",)).fits["D"]
    free_spec = ClpmSpec(time_invariant=False)
    free = fit_variants(d_panel, free_spec, variants=("D",)).fits["D"]
    assert free.q > tied.q
    assert free.chi_square <= tied.chi_square + 1e-4


def test_researcher_order_does_not_change_estimates(d_panel):
    spec = ClpmSpec()
    reordered = PanelDataset(list(reversed(d_panel.observations)))
    a = fit_variants(d_panel, spec, variants=("D",)).fits["D"]
    b = fit_variants(reordered, spec, variants=("D",)).fits["D"]
    assert np.allclose(a.theta, b.theta, atol=1e-6)


def test_threaded_and_serial_fits_agree(d_panel, d_comparison):
    serial = fit_variants(d_panel, ClpmSpec(), threads=1)
    for v in VARIANTS:
        assert np.allclose(serial[v].theta, d_comparison[v].theta, atol=0.0)
    assert serial.selected == d_comparison.selected


def test_linear_time_effect_is_smaller_model(d_panel):
    spec = ClpmSpec(time_effect="linear")
    q_linear = len(build_model(spec, "D").free_params())
    q_dummies = len(build_model(ClpmSpec(), "D").free_params())
    assert q_linear < q_dummies
    with pytest.raises(ModelSpecError):
        ClpmSpec(time_effect="quadratic")


def test_coefficient_table_layout(d_comparison):
    table = coefficient_table(d_comparison)
    assert "Model A" in table and "Model D" in table
    assert "FSS equation" in table and "Rank equation" in table
    assert "FSS (t-2)" in table
    assert "Gender (male)" in table
    assert "R-squared (%)" in table
    assert "chi-square" in table and "AIC" in table
    assert "Selected variant: D" in table
    assert "*** p<0.001" in table
    # every line fits a reasonable page width
    assert max(len(line) for line in table.splitlines()) < 120


def test_comparison_serialization(d_comparison):
    blob = d_comparison.to_dict()
    assert set(blob["fits"]) == {"A", "B", "C", "D"}
    assert blob["selected"] == "D"
    assert blob["tests"]["B"]["delta_df"] == 3
