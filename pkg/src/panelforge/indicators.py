"""Per-window productivity and collaboration indicators.

The productivity score of a researcher over a window of ``t`` years is

    (1/t) * sum_j (c_j / cbar_j) * f_j

where ``c_j`` is the citation count of publication j, ``cbar_j`` the mean
citation count of cited publications of the same year and subject category
(averaged across categories for multi-category publications), and ``f_j``
the researcher's fractional contribution to the byline. Scores are then
scaled by the mean score of the researcher's field (SDS) so that values are
comparable across fields.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import (
    CollaborationProfile,
    PublicationRecord,
    ResearcherRecord,
    WindowSpec,
    classify_collaboration,
)
from .errors import BaselineUndefinedError, DegenerateGroupError

logger = logging.getLogger(__name__)

INDICATOR_HEADER = ["researcher_id", "window", "n_pubs", "fss", "fss_scaled", "c", "ci", "ced", "cef"]


@dataclass(frozen=True)
class FractionalScheme:
    """How a byline's credit is split.

    kind "uniform": equal shares. kind "byline_weighted": first/last
    author weighting used for fields where byline order carries meaning;
    see :func:`fractional_contribution` for the exact weights.
    """

    kind: str = "uniform"

    def __post_init__(self):
        if self.kind not in ("uniform", "byline_weighted"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")


UNIFORM = FractionalScheme("uniform")
BYLINE_WEIGHTED = FractionalScheme("byline_weighted")


def byline_weights(n: int, first_last_same_university: bool) -> list[float]:
    """Raw position weights for a byline of length ``n``, renormalized to sum 1.

    Same-university branch: first and last get 0.40 each, the remaining
    0.20 is split among the middle authors. Different-university branch:
    first and last get 0.30, second and second-to-last 0.15, the remaining
    0.10 is split among the others. Overlapping roles on short bylines sum
    their role weights; the vector is then renormalized exactly.
    """
    if n < 1:
        raise ValueError("byline length must be >= 1")
    weights = [0.0] * n
    roles: dict[int, float] = {}

    def add_role(pos: int, w: float) -> None:
        if 1 <= pos <= n:
            roles[pos] = roles.get(pos, 0.0) + w

    if first_last_same_university:
        add_role(1, 0.40)
        add_role(n, 0.40)
        shared = 0.20
    else:
        add_role(1, 0.30)
        add_role(n, 0.30)
        add_role(2, 0.15)
        add_role(n - 1, 0.15)
        shared = 0.10
    for pos, w in roles.items():
        weights[pos - 1] += w
    rest = [i for i in range(1, n + 1) if i not in roles]
    if rest:
        each = shared / len(rest)
        for pos in rest:
            weights[pos - 1] += each
    # Short bylines leave role weight unassigned: renormalize so the byline
    # always sums to exactly 1.
    total = sum(weights)
    inv = 1.0 / total
    return [w * inv for w in weights]


def fractional_contribution(
    pub: PublicationRecord,
    researcher_id: str,
    scheme: FractionalScheme = UNIFORM,
) -> float:
    """The researcher's share of credit for one publication."""
    entry = pub.author_of(researcher_id)
    if entry is None:
        raise ValueError(f"researcher {researcher_id!r} is not on the byline of {pub.publication_id!r}")
    n = len(pub.byline)
    if scheme.kind == "uniform":
        return 1.0 / n
    first = next(a for a in pub.byline if a.position == 1)
    last = next(a for a in pub.byline if a.position == n)
    same = (
        first.university_id is not None
        and last.university_id is not None
        and first.university_id == last.university_id
    )
    return byline_weights(n, same)[entry.position - 1]


# ---------------------------------------------------------------------------
# Citation baselines

class CitationBaseline:
    """Mean citations of cited publications per (year, subject category)."""

    def __init__(self, means: Mapping[tuple[int, str], float], counts: Mapping[tuple[int, str], int]):
        self._means = dict(means)
        self._counts = dict(counts)

    def mean(self, year: int, category: str) -> float:
        try:
            return self._means[(year, category)]
        except KeyError:
            raise BaselineUndefinedError(year, category) from None

    def count(self, year: int, category: str) -> int:
        return self._counts.get((year, category), 0)

    def cells(self) -> list[tuple[int, str]]:
        return sorted(self._means)

    def expected_citations(self, pub: PublicationRecord) -> float:
        """Average of the per-category baselines of the publication's cells."""
        values = [self.mean(pub.year, cat) for cat in pub.subject_categories]
        return sum(values) / len(values)


def citation_baseline(pubs: Sequence[PublicationRecord]) -> CitationBaseline:
    """Build baselines from the corpus; only cited publications enter the means.

    A publication with several subject categories contributes to every one
    of its cells.
    """
    totals: dict[tuple[int, str], int] = defaultdict(int)
    counts: dict[tuple[int, str], int] = defaultdict(int)
    for p in pubs:
        if p.citation_count < 1:
            continue
        for cat in p.subject_categories:
            totals[(p.year, cat)] += p.citation_count
            counts[(p.year, cat)] += 1
    means = {cell: totals[cell] / counts[cell] for cell in totals}
    return CitationBaseline(means, counts)


# ---------------------------------------------------------------------------
# Scores

def fss(
    pubs: Iterable[PublicationRecord],
    researcher_id: str,
    baseline: CitationBaseline,
    *,
    scheme: FractionalScheme = UNIFORM,
    t_years: int = 3,
) -> float:
    """Citation-normalized fractional productivity over ``t_years``.

    Uncited publications contribute zero and do not need a baseline cell.
    """
    if t_years < 1:
        raise ValueError("t_years must be >= 1")
    total = 0.0
    for p in pubs:
        if p.author_of(researcher_id) is None:
            raise ValueError(f"researcher {researcher_id!r} is not on the byline of {p.publication_id!r}")
        if p.citation_count == 0:
            continue
        cbar = baseline.expected_citations(p)
        total += (p.citation_count / cbar) * fractional_contribution(p, researcher_id, scheme)
    return total / t_years


def fss_scaled(values: Mapping[str, float], sds_of: Mapping[str, str]) -> dict[str, float]:
    """Divide each researcher's score by the mean score of their SDS group.

    Raises :class:`DegenerateGroupError` when a group's mean is zero.
    """
    groups: dict[str, list[str]] = defaultdict(list)
    for rid in values:
        groups[sds_of[rid]].append(rid)
    out: dict[str, float] = {}
    for sds, members in groups.items():
        mean = sum(values[r] for r in members) / len(members)
        if mean == 0.0:
            raise DegenerateGroupError(f"SDS group {sds!r} has zero mean score; scaling undefined")
        for r in members:
            out[r] = values[r] / mean
    return out


def propensities(profiles: Sequence[CollaborationProfile]) -> tuple[float, float, float, float]:
    """(c, ci, ced, cef): shares of co-authored/intra/extra-domestic/
    extra-international publications among ``profiles``."""
    n = len(profiles)
    if n == 0:
        raise ValueError("at least one publication is required")
    c = sum(p.is_coauthored for p in profiles) / n
    ci = sum(p.intra_university for p in profiles) / n
    ced = sum(p.extramural_domestic for p in profiles) / n
    cef = sum(p.extramural_international for p in profiles) / n
    return c, ci, ced, cef


@dataclass(frozen=True)
class WindowIndicators:
    researcher_id: str
    window: int
    n_pubs: int
    fss: float
    fss_scaled: float
    c: float
    ci: float
    ced: float
    cef: float


def compute_window_indicators(
    roster: Mapping[str, ResearcherRecord],
    pubs: Sequence[PublicationRecord],
    windows: Sequence[WindowSpec],
    active: set[str],
    *,
    weighted_udas: frozenset[str] | set[str] = frozenset(),
    home_country: str = "IT",
    strict_roster_intra: bool = True,
    missing_country: str = "home",
) -> list[WindowIndicators]:
    """Full indicator table for the active population.

    ``weighted_udas`` lists the disciplinary areas whose byline order is
    meaningful; researchers there get the weighted fractional scheme.
    """
    baseline = citation_baseline(pubs)
    by_researcher: dict[str, list[PublicationRecord]] = defaultdict(list)
    for p in pubs:
        for a in p.byline:
            if a.researcher_id in active:
                by_researcher[a.researcher_id].append(p)

    rows: list[WindowIndicators] = []
    raw: dict[tuple[str, int], float] = {}
    for w in windows:
        for rid in sorted(active):
            researcher = roster[rid]
            in_window = [p for p in by_researcher.get(rid, ()) if w.contains(p.year)]
            scheme = BYLINE_WEIGHTED if researcher.uda in weighted_udas else UNIFORM
            score = fss(in_window, rid, baseline, scheme=scheme, t_years=w.length)
            profiles = [
                classify_collaboration(
                    p, researcher, dict(roster),
                    home_country=home_country,
                    strict_roster_intra=strict_roster_intra,
                    missing_country=missing_country,
                )
                for p in in_window
            ]
            c, ci, ced, cef = propensities(profiles) if profiles else (0.0, 0.0, 0.0, 0.0)
            raw[(rid, w.index)] = score
            rows.append(WindowIndicators(rid, w.index, len(in_window), score, 0.0, c, ci, ced, cef))

    # Scale within (window, SDS) over the active population.
    sds_of = {rid: roster[rid].sds for rid in active}
    scaled: dict[tuple[str, int], float] = {}
    for w in windows:
        window_values = {rid: raw[(rid, w.index)] for rid in active}
        for rid, v in fss_scaled(window_values, sds_of).items():
            scaled[(rid, w.index)] = v
    return [
        WindowIndicators(r.researcher_id, r.window, r.n_pubs, r.fss,
                         scaled[(r.researcher_id, r.window)], r.c, r.ci, r.ced, r.cef)
        for r in rows
    ]


def write_indicators_csv(rows: Sequence[WindowIndicators]) -> str:
    """Indicator table as CSV with fixed 6-decimal formatting."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(INDICATOR_HEADER)
    for r in rows:
        writer.writerow([
            r.researcher_id, r.window, r.n_pubs,
            f"{r.fss:.6f}", f"{r.fss_scaled:.6f}",
            f"{r.c:.6f}", f"{r.ci:.6f}", f"{r.ced:.6f}", f"{r.cef:.6f}",
        ])
    return out.getvalue()
