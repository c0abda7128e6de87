"""Balanced researcher-by-wave panels and descriptive statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import ResearcherRecord, WindowSpec, rank_at
from .errors import BalanceError, CollinearityError, DegenerateColumnError
from .indicators import WindowIndicators

PANEL_HEADER = ["researcher_id", "wave", "fss_scaled", "c", "ci", "ced", "cef", "rank", "cohort", "gender"]

#: Numeric panel columns in file order.
VALUE_COLUMNS = ("fss_scaled", "c", "ci", "ced", "cef", "rank", "cohort", "gender")


@dataclass(frozen=True)
class PanelObservation:
    researcher_id: str
    wave: int
    fss_scaled: float
    c: float
    ci: float
    ced: float
    cef: float
    rank: float
    cohort: int
    gender: int  # 1 = male, 0 = female (female is the reference)

    def value(self, column: str) -> float:
        return getattr(self, column)


class PanelDataset:
    """A balanced panel: every researcher observed in every wave."""

    def __init__(self, observations: Sequence[PanelObservation]):
        rows = sorted(observations, key=lambda o: (o.researcher_id, o.wave))
        self._index: dict[tuple[str, int], PanelObservation] = {}
        for o in rows:
            key = (o.researcher_id, o.wave)
            if key in self._index:
                raise BalanceError(f"duplicate observation for {key}")
            self._index[key] = o
        self.researchers = tuple(sorted({o.researcher_id for o in rows}))
        self.waves = tuple(sorted({o.wave for o in rows}))
        if not rows:
            raise BalanceError("panel is empty")
        for rid in self.researchers:
            missing = [w for w in self.waves if (rid, w) not in self._index]
            if missing:
                raise BalanceError(f"researcher {rid!r} is missing waves {missing}")
        for rid in self.researchers:
            series = [self._index[(rid, w)] for w in self.waves]
            if len({o.cohort for o in series}) > 1 or len({o.gender for o in series}) > 1:
                raise BalanceError(f"cohort/gender of researcher {rid!r} varies across waves")
        self.observations = tuple(rows)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def n_researchers(self) -> int:
        return len(self.researchers)

    @property
    def n_waves(self) -> int:
        return len(self.waves)

    def get(self, researcher_id: str, wave: int) -> PanelObservation:
        return self._index[(researcher_id, wave)]

    def column(self, name: str) -> np.ndarray:
        """Pooled values of one column across all observations."""
        return np.array([o.value(name) for o in self.observations], dtype=float)

    def wide(self, columns: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
        """One row per researcher: cohort, gender, then each process column by wave."""
        columns = list(columns) if columns is not None else ["fss_scaled", "ci", "ced", "cef", "rank"]
        names = ["cohort", "gender"] + [f"{col}_{w}" for col in columns for w in self.waves]
        data = np.empty((self.n_researchers, len(names)))
        for i, rid in enumerate(self.researchers):
            first = self._index[(rid, self.waves[0])]
            row = [float(first.cohort), float(first.gender)]
            for col in columns:
                row.extend(self._index[(rid, w)].value(col) for w in self.waves)
            data[i] = row
        return data, names


def build_panel(
    indicators: Sequence[WindowIndicators],
    roster: Mapping[str, ResearcherRecord],
    windows: Sequence[WindowSpec],
    *,
    require_monotone_rank: bool = True,
) -> PanelDataset:
    """Join indicator rows with roster attributes and rank snapshots.

    Rank is taken on the day before each window opens. Real rank histories
    never demote, so a decreasing rank is rejected by default.
    """
    by_index = {w.index: w for w in windows}
    observations = []
    snapshots: dict[str, dict[int, int]] = {}
    for row in indicators:
        researcher = roster[row.researcher_id]
        window = by_index[row.window]
        rank = rank_at(researcher, window.rank_snapshot_date)
        snapshots.setdefault(row.researcher_id, {})[row.window] = rank
        observations.append(PanelObservation(
            researcher_id=row.researcher_id,
            wave=row.window,
            fss_scaled=row.fss_scaled,
            c=row.c, ci=row.ci, ced=row.ced, cef=row.cef,
            rank=float(rank),
            cohort=researcher.birth_year,
            gender=1 if researcher.gender == "male" else 0,
        ))
    if require_monotone_rank:
        for rid, per_wave in snapshots.items():
            ranks = [per_wave[w] for w in sorted(per_wave)]
            if any(b < a for a, b in zip(ranks, ranks[1:])):
                raise BalanceError(f"rank of researcher {rid!r} decreases across waves: {ranks}")
    return PanelDataset(observations)


# ---------------------------------------------------------------------------
# Descriptives

@dataclass(frozen=True)
class ColumnStats:
    name: str
    mean: float
    sd: float
    minimum: float
    maximum: float
    n: int


def descriptive_stats(panel: PanelDataset, columns: Sequence[str] = VALUE_COLUMNS) -> list[ColumnStats]:
    """Pooled mean/sd (ddof=1) per column."""
    out = []
    for name in columns:
        x = panel.column(name)
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        out.append(ColumnStats(name, float(np.mean(x)), sd, float(np.min(x)), float(np.max(x)), x.size))
    return out


def _pearson_p(r: float, m: int) -> float:
    if m < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = abs(r) * math.sqrt((m - 2) / (1.0 - r * r))
    return 2.0 * float(stats.t.sf(t, m - 2))


def significance_stars(p: float, marginal: bool = False) -> str:
    if math.isnan(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if marginal and p < 0.1:
        return "°"
    return ""


@dataclass(frozen=True)
class CorrelationMatrix:
    columns: tuple[str, ...]
    r: np.ndarray
    p: np.ndarray
    n: int

    def cell(self, a: str, b: str) -> tuple[float, float, str]:
        i, j = self.columns.index(a), self.columns.index(b)
        return float(self.r[i, j]), float(self.p[i, j]), significance_stars(float(self.p[i, j]))


def correlation_matrix(
    panel: PanelDataset,
    columns: Sequence[str] = VALUE_COLUMNS,
    *,
    mode: str = "pooled",
) -> CorrelationMatrix:
    """Pearson correlations with two-sided t-test p-values.

    ``mode`` is "pooled" (all researcher-wave observations, the default)
    or "wave1" (first wave only, one row per researcher).
    """
    if mode not in ("pooled", "wave1"):
        raise ValueError(f"unknown correlation mode {mode!r}")
    if mode == "pooled":
        data = np.column_stack([panel.column(c) for c in columns])
    else:
        first = panel.waves[0]
        rows = [panel.get(rid, first) for rid in panel.researchers]
        data = np.array([[o.value(c) for c in columns] for o in rows], dtype=float)
    m = data.shape[0]
    k = len(columns)
    r = np.eye(k)
    p = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            xi, xj = data[:, i], data[:, j]
            si, sj = np.std(xi), np.std(xj)
            if si == 0.0 or sj == 0.0:
                raise DegenerateColumnError(str(columns[i] if si == 0.0 else columns[j]))
            rij = float(np.corrcoef(xi, xj)[0, 1])
            r[i, j] = r[j, i] = rij
            p[i, j] = p[j, i] = _pearson_p(rij, m)
    return CorrelationMatrix(tuple(columns), r, p, m)


def collinearity_diagnostics(
    panel: PanelDataset,
    predictors: Sequence[str] = ("fss_scaled", "ci", "ced", "cef", "rank", "cohort", "gender"),
) -> dict[str, float]:
    """Variance inflation factor per predictor (pooled observations).

    VIF_k = 1 / (1 - R^2) from regressing predictor k on the others plus an
    intercept. An exact linear dependence raises :class:`CollinearityError`
    naming the predictor.
    """
    data = np.column_stack([panel.column(c) for c in predictors])
    m, k = data.shape
    out: dict[str, float] = {}
    for idx, name in enumerate(predictors):
        y = data[:, idx]
        others = np.delete(data, idx, axis=1)
        design = np.column_stack([np.ones(m), others])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0.0:
            raise CollinearityError(name)
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
        if r2 > 1.0 - 1e-12:
            raise CollinearityError(name)
        out[name] = 1.0 / (1.0 - r2)
    return out


# ---------------------------------------------------------------------------
# CSV round-trip

def write_panel_csv(panel: PanelDataset) -> str:
    """Serialize with full-precision floats so a round-trip is exact."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PANEL_HEADER)
    for o in panel.observations:
        writer.writerow([
            o.researcher_id, o.wave,
            repr(o.fss_scaled), repr(o.c), repr(o.ci), repr(o.ced), repr(o.cef),
            repr(o.rank), o.cohort, o.gender,
        ])
    return out.getvalue()


def read_panel_csv(text_or_path) -> PanelDataset:
    if isinstance(text_or_path, str) and "\n" not in text_or_path:
        text = open(text_or_path, "r", encoding="utf-8").read()
    elif hasattr(text_or_path, "read"):
        text = text_or_path.read()
    else:
        text = text_or_path
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != PANEL_HEADER:
        raise BalanceError(f"bad panel header: {header!r}")
    obs = []
    for row in reader:
        if not row:
            continue
        obs.append(PanelObservation(
            researcher_id=row[0], wave=int(row[1]),
            fss_scaled=float(row[2]), c=float(row[3]), ci=float(row[4]),
            ced=float(row[5]), cef=float(row[6]), rank=float(row[7]),
            cohort=int(row[8]), gender=int(row[9]),
        ))
    return PanelDataset(obs)


def rank_snapshot_label(window: WindowSpec) -> str:
    d = window.rank_snapshot_date
    return d.strftime("%d/%m/%Y")


__all__ = [
    "PanelObservation", "PanelDataset", "build_panel", "descriptive_stats",
    "correlation_matrix", "CorrelationMatrix", "collinearity_diagnostics",
    "significance_stars", "write_panel_csv", "read_panel_csv",
    "PANEL_HEADER", "VALUE_COLUMNS", "ColumnStats",
]
