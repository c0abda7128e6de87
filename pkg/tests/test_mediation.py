"""Direct and two-step indirect effects through the lag structure."""

import numpy as np
import pytest

from panelforge.clpm import ClpmSpec
from panelforge.mediation import (
    MEDIATION_HEADER,
    MediationCell,
    PathSystem,
    channel_contributions,
    direct_effect,
    indirect_effect,
    mediation_csv_rows,
    mediation_report,
    mediation_table,
)


def system_from(lags, covs, processes=("fss", "ci", "ced", "cef", "rank"),
                covariates=("cohort", "gender")):
    return PathSystem(
        processes=tuple(processes),
        covariates=tuple(covariates),
        lag_matrices=tuple(np.asarray(m, dtype=float) for m in lags),
        covariate_matrices=tuple(np.asarray(m, dtype=float) for m in covs),
    )


def random_system(rng, n_pairs=3):
    k, c = 5, 2
    lags = [rng.normal(0, 0.3, (k, k)) for _ in range(n_pairs)]
    covs = [rng.normal(0, 0.1, (k, c)) for _ in range(n_pairs)]
    return system_from(lags, covs)


def brute_force_indirect(paths, treatment, outcome):
    """Sum over every mediator of the two-step path product, in plain python."""
    first_pair = paths.n_pairs - 2
    second_pair = paths.n_pairs - 1
    out_i = paths.processes.index(outcome)
    total = 0.0
    for m, mediator in enumerate(paths.processes):
        if treatment in paths.processes:
            step1 = paths.lag_matrices[first_pair][m][paths.processes.index(treatment)]
        else:
            step1 = paths.covariate_matrices[first_pair][m][paths.covariates.index(treatment)]
        step2 = paths.lag_matrices[second_pair][out_i][m]
        total += step2 * step1
    return total


def test_single_mediator_product():
    # treatment -> mediator 0.5, mediator -> outcome 0.4, nothing else
    lag = np.zeros((5, 5))
    lag[0, 4] = 0.5   # rank (index 4) onto fss (index 0)
    lag2 = np.zeros((5, 5))
    lag2[1, 0] = 0.4  # fss onto ci
    paths = system_from([lag, lag2], [np.zeros((5, 2))] * 2)
    assert indirect_effect(paths, "rank", "ci") == 0.5 * 0.4


def test_indirect_matches_brute_force_enumeration():
    rng = np.random.default_rng(2026)
    for _ in range(25):
        paths = random_system(rng)
        for treatment in ("rank", "cohort", "gender", "fss"):
            for outcome in ("fss", "ci", "ced", "cef"):
                if treatment == outcome:
                    continue
                expected = brute_force_indirect(paths, treatment, outcome)
                assert indirect_effect(paths, treatment, outcome) == pytest.approx(
                    expected, abs=1e-12)


def test_channel_contributions_sum_to_indirect():
    rng = np.random.default_rng(7)
    paths = random_system(rng)
    channels = channel_contributions(paths, "gender", "fss")
    assert set(channels) == set(paths.processes)
    assert sum(channels.values()) == pytest.approx(
        indirect_effect(paths, "gender", "fss"), abs=1e-12)


def test_direct_effect_reads_last_pair():
    rng = np.random.default_rng(9)
    paths = random_system(rng)
    last = paths.n_pairs - 1
    i, j = paths.processes.index("ci"), paths.processes.index("rank")
    assert direct_effect(paths, "rank", "ci") == paths.lag_matrices[last][i, j]
    g = paths.covariates.index("gender")
    assert direct_effect(paths, "gender", "ci") == paths.covariate_matrices[last][i, g]


def test_two_pairs_needed():
    rng = np.random.default_rng(4)
    lag = rng.normal(0, 0.2, (5, 5))
    paths = system_from([lag], [np.zeros((5, 2))])
    with pytest.raises(ValueError):
        indirect_effect(paths, "rank", "fss")


def test_ratio_undefined_when_direct_is_zero():
    cell = MediationCell("rank", "fss", indirect=0.2, direct=0.0)
    assert cell.ratio_pct is None
    cell = MediationCell("rank", "fss", indirect=0.2, direct=0.1)
    assert cell.ratio_pct == pytest.approx(200.0)


def test_report_covers_treatment_outcome_grid():
    rng = np.random.default_rng(12)
    paths = random_system(rng)
    cells = mediation_report(paths)
    pairs = {(c.treatment, c.outcome) for c in cells}
    assert len(cells) == 12  # 3 treatments x 4 outcomes
    assert ("rank", "fss") in pairs and ("gender", "cef") in pairs
    assert all(c.outcome != "rank" for c in cells)


def test_table_marks_undefined_ratio():
    cells = (MediationCell("rank", "fss", 0.25, 0.0),)
    text = mediation_table(cells)
    assert "—" in text
    assert "Rank" in text and "FSS" in text


def test_csv_rows_round_trip_floats():
    cells = (MediationCell("rank", "fss", 0.125, 0.25),)
    rows = mediation_csv_rows(cells)
    assert tuple(rows[0]) == tuple(MEDIATION_HEADER)
    row = dict(zip(MEDIATION_HEADER, rows[1]))
    assert float(row["indirect"]) == 0.125
    assert float(row["ratio_pct"]) == 50.0


def test_paths_from_fit_match_estimates(d_comparison):
    spec = ClpmSpec()
    fit_d = d_comparison["D"]
    paths = PathSystem.from_fit(fit_d, spec)
    assert paths.n_pairs == 3
    i_fss = paths.processes.index("fss")
    i_ci = paths.processes.index("ci")
    # time-invariant coefficients fill every pair with the same value
    for pair in (1, 2):
        assert paths.lag_matrices[pair][i_fss, i_fss] == fit_d["b_fss_fss"].value
        assert paths.lag_matrices[pair][i_ci, i_fss] == fit_d["b_ci_fss"].value
    # wave 2 has no rank equation: that row stays zero in the first pair
    i_rank = paths.processes.index("rank")
    assert np.all(paths.lag_matrices[0][i_rank] == 0.0)
    assert paths.lag_matrices[1][i_rank, i_rank] == fit_d["b_rank_rank"].value
