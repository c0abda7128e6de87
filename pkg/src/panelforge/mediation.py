"""Two-step indirect effects through the fitted lag-1 path system.

The indirect effect of a treatment on an outcome two waves later is the sum,
over every process playing mediator at the middle wave, of the treatment's
lag-1 coefficient into the mediator times the mediator's lag-1 coefficient
into the outcome.  The treatment's own continuation and the outcome's own
persistence are mediating channels like any other, so they stay in the sum.
The direct effect is the treatment's lag-1 coefficient into the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clpm import COVARIATES, PROCESS_LABELS, ClpmSpec, _coef_id
from .semcore import FitResult
from .tables import render_table


@dataclass(frozen=True, eq=False)
class PathSystem:
    """Lag-1 coefficients between processes plus covariate coefficients.

    One matrix per adjacent wave pair; pair ``j`` maps wave ``j+1`` onto wave
    ``j+2``.  Rows index the dependent process, columns the predictor.  A
    process with no equation at the receiving wave has a zero row.  Under
    time-invariant coefficients all pairs carry the same matrix.
    """

    processes: tuple[str, ...]
    covariates: tuple[str, ...]
    lag_matrices: tuple[np.ndarray, ...]
    covariate_matrices: tuple[np.ndarray, ...]

    @classmethod
    def from_fit(cls, result: FitResult, spec: ClpmSpec) -> "PathSystem":
        procs = spec.processes
        k = len(procs)

        def value(pid: str) -> float:
            if pid in result.param_names:
                return float(result[pid].value)
            return 0.0

        lag, cov = [], []
        for receiving_wave in range(2, spec.waves + 1):
            b = np.zeros((k, k))
            g = np.zeros((k, len(COVARIATES)))
            for i, dep in enumerate(procs):
                if receiving_wave not in spec.endogenous_waves(dep):
                    continue
                for j, pred in enumerate(procs):
                    b[i, j] = value(_coef_id(spec, dep, pred, receiving_wave))
                for j, c in enumerate(COVARIATES):
                    g[i, j] = value(_coef_id(spec, dep, c, receiving_wave))
            lag.append(b)
            cov.append(g)
        return cls(
            processes=procs,
            covariates=COVARIATES,
            lag_matrices=tuple(lag),
            covariate_matrices=tuple(cov),
        )

    @property
    def n_pairs(self) -> int:
        return len(self.lag_matrices)

    def _pidx(self, name: str) -> int:
        try:
            return self.processes.index(name)
        except ValueError:
            raise ValueError(f"unknown process {name!r}") from None

    def lag_coefficient(self, dep: str, pred: str, pair: int = -1) -> float:
        return float(self.lag_matrices[pair][self._pidx(dep), self._pidx(pred)])

    def covariate_coefficient(self, dep: str, cov: str, pair: int = -1) -> float:
        j = self.covariates.index(cov)
        return float(self.covariate_matrices[pair][self._pidx(dep), j])

    def first_step(self, treatment: str, pair: int) -> np.ndarray:
        """Column of treatment-to-mediator coefficients at the given pair."""
        if treatment in self.processes:
            return self.lag_matrices[pair][:, self._pidx(treatment)].copy()
        if treatment in self.covariates:
            j = self.covariates.index(treatment)
            return self.covariate_matrices[pair][:, j].copy()
        raise ValueError(f"unknown treatment {treatment!r}")


def indirect_effect(paths: PathSystem, treatment: str, outcome: str) -> float:
    """Sum of all two-step channels ending at the outcome's final wave."""
    if paths.n_pairs < 2:
        raise ValueError("two-step effects need at least three waves")
    first = paths.first_step(treatment, paths.n_pairs - 2)
    second = paths.lag_matrices[paths.n_pairs - 1][paths._pidx(outcome), :]
    return float(second @ first)


def channel_contributions(
    paths: PathSystem, treatment: str, outcome: str
) -> dict[str, float]:
    """Per-mediator breakdown of the two-step indirect effect."""
    first = paths.first_step(treatment, paths.n_pairs - 2)
    second = paths.lag_matrices[paths.n_pairs - 1][paths._pidx(outcome), :]
    return {
        med: float(second[m] * first[m]) for m, med in enumerate(paths.processes)
    }


def direct_effect(paths: PathSystem, treatment: str, outcome: str) -> float:
    if treatment in paths.processes:
        return paths.lag_coefficient(outcome, treatment)
    return paths.covariate_coefficient(outcome, treatment)


@dataclass(frozen=True)
class MediationCell:
    treatment: str
    outcome: str
    indirect: float
    direct: float

    @property
    def ratio_pct(self) -> float | None:
        """Indirect effect as a percentage of the direct one; None if direct is zero."""
        if self.direct == 0.0:
            return None
        return 100.0 * self.indirect / self.direct


DEFAULT_TREATMENTS = ("rank", "cohort", "gender")


def mediation_report(
    paths: PathSystem,
    treatments: tuple[str, ...] = DEFAULT_TREATMENTS,
    outcomes: tuple[str, ...] | None = None,
) -> tuple[MediationCell, ...]:
    if outcomes is None:
        outcomes = tuple(p for p in paths.processes if p != "rank")
    cells = []
    for treatment in treatments:
        for outcome in outcomes:
            cells.append(
                MediationCell(
                    treatment=treatment,
                    outcome=outcome,
                    indirect=indirect_effect(paths, treatment, outcome),
                    direct=direct_effect(paths, treatment, outcome),
                )
            )
    return tuple(cells)


def _label(name: str) -> str:
    return PROCESS_LABELS.get(name, name.capitalize())


def mediation_table(cells: tuple[MediationCell, ...]) -> str:
    rows = []
    for cell in cells:
        ratio = cell.ratio_pct
        rows.append(
            [
                _label(cell.treatment),
                _label(cell.outcome),
                f"{cell.indirect:.3f}",
                f"{cell.direct:.3f}",
                "—" if ratio is None else f"{ratio:.1f}",
            ]
        )
    return render_table(
        rows, ["Treatment", "Outcome", "Indirect", "Direct", "% of direct"]
    )


MEDIATION_HEADER = ("treatment", "outcome", "indirect", "direct", "ratio_pct")


def mediation_csv_rows(cells: tuple[MediationCell, ...]) -> list[list[str]]:
    out = [list(MEDIATION_HEADER)]
    for cell in cells:
        ratio = cell.ratio_pct
        out.append(
            [
                cell.treatment,
                cell.outcome,
                repr(cell.indirect),
                repr(cell.direct),
                "" if ratio is None else repr(ratio),
            ]
        )
    return out
