"""Roster and publication corpus: records, file formats, classification.

The roster is a CSV file with header
``researcher_id,gender,birth_year,sds,uda,university_id,rank_history``
where ``rank_history`` is ``date:rank`` pairs joined by ``|``.
Publications are JSON lines, one object per publication.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateIdError, InputError, ParseError

logger = logging.getLogger(__name__)

GENDERS = ("male", "female")
MIN_BIRTH_YEAR = 1900

#: Document types dropped before any indicator is computed.
DEFAULT_EXCLUDED_DOC_TYPES = frozenset(
    {"editorial material", "meeting abstract", "letter reply", "correction", "news item"}
)

DEFAULT_HOME_COUNTRY = "IT"

ROSTER_HEADER = ["researcher_id", "gender", "birth_year", "sds", "uda", "university_id", "rank_history"]


@dataclass(frozen=True)
class RankEntry:
    effective_date: datetime.date
    rank: int


@dataclass(frozen=True)
class ResearcherRecord:
    researcher_id: str
    gender: str
    birth_year: int
    sds: str
    uda: str
    university_id: str
    rank_history: tuple[RankEntry, ...]

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        this_year = datetime.date.today().year
        if not MIN_BIRTH_YEAR <= self.birth_year <= this_year:
            raise ValueError(f"birth_year {self.birth_year} outside [{MIN_BIRTH_YEAR}, {this_year}]")
        if not self.rank_history:
            raise ValueError("rank_history must not be empty")
        dates = [e.effective_date for e in self.rank_history]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("rank_history dates must be strictly increasing")
        for entry in self.rank_history:
            if not 1 <= entry.rank <= 4:
                raise ValueError(f"rank must be in 1..4, got {entry.rank}")


@dataclass(frozen=True)
class AuthorEntry:
    position: int
    country: str | None = None
    researcher_id: str | None = None
    university_id: str | None = None

    def __post_init__(self):
        if self.position < 1:
            raise ValueError("byline positions are 1-based")


@dataclass(frozen=True)
class PublicationRecord:
    publication_id: str
    year: int
    doc_type: str
    subject_categories: tuple[str, ...]
    citation_count: int
    byline: tuple[AuthorEntry, ...]

    def __post_init__(self):
        if not self.subject_categories:
            raise ValueError("subject_categories must not be empty")
        if self.citation_count < 0:
            raise ValueError("citation_count must be >= 0")
        if not self.byline:
            raise ValueError("byline must not be empty")
        positions = sorted(a.position for a in self.byline)
        if positions != list(range(1, len(self.byline) + 1)):
            raise ValueError("byline positions must be exactly 1..n")

    def author_of(self, researcher_id: str) -> AuthorEntry | None:
        for entry in self.byline:
            if entry.researcher_id == researcher_id:
                return entry
        return None


@dataclass(frozen=True)
class CollaborationProfile:
    is_coauthored: bool
    intra_university: bool
    extramural_domestic: bool
    extramural_international: bool

    def __post_init__(self):
        specific = self.intra_university or self.extramural_domestic or self.extramural_international
        if specific and not self.is_coauthored:
            raise ValueError("specific collaboration flags require is_coauthored")


@dataclass(frozen=True)
class WindowSpec:
    index: int
    start_year: int
    end_year: int

    def __post_init__(self):
        if self.end_year < self.start_year:
            raise ValueError("end_year must be >= start_year")

    @property
    def length(self) -> int:
        return self.end_year - self.start_year + 1

    @property
    def rank_snapshot_date(self) -> datetime.date:
        """Day before the window opens."""
        return datetime.date(self.start_year, 1, 1) - datetime.timedelta(days=1)

    def contains(self, year: int) -> bool:
        return self.start_year <= year <= self.end_year


def make_windows(first_year: int = 2001, length: int = 3, count: int = 4) -> tuple[WindowSpec, ...]:
    """Contiguous equal-length observation windows starting at ``first_year``."""
    if length < 1 or count < 1:
        raise ValueError("length and count must be positive")
    return tuple(
        WindowSpec(i + 1, first_year + i * length, first_year + (i + 1) * length - 1)
        for i in range(count)
    )


# ---------------------------------------------------------------------------
# Roster I/O

def _parse_rank_history(text: str) -> tuple[RankEntry, ...]:
    entries = []
    for chunk in text.split("|"):
        date_part, sep, rank_part = chunk.partition(":")
        if not sep:
            raise ValueError(f"rank_history entry {chunk!r} is not 'date:rank'")
        entries.append(RankEntry(datetime.date.fromisoformat(date_part), int(rank_part)))
    return tuple(entries)


def load_roster(source: str | Path | io.TextIOBase) -> dict[str, ResearcherRecord]:
    """Parse a roster CSV into a mapping keyed by researcher id.

    Raises :class:`ParseError` with the offending row number on malformed
    input, :class:`DuplicateIdError` on repeated researcher ids.
    """
    name, fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty roster file", source=name)
        if header != ROSTER_HEADER:
            raise ParseError(f"bad header {header!r}", source=name, row=1)
        records: dict[str, ResearcherRecord] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(ROSTER_HEADER):
                raise ParseError(f"expected {len(ROSTER_HEADER)} fields, got {len(row)}", source=name, row=row_no)
            rid = row[0]
            if rid in records:
                raise DuplicateIdError(f"duplicate researcher_id {rid!r}", source=name, row=row_no)
            try:
                record = ResearcherRecord(
                    researcher_id=rid,
                    gender=row[1],
                    birth_year=int(row[2]),
                    sds=row[3],
                    uda=row[4],
                    university_id=row[5],
                    rank_history=_parse_rank_history(row[6]),
                )
            except (ValueError, TypeError) as exc:
                raise ParseError(str(exc), source=name, row=row_no) from exc
            records[rid] = record
        return records
    finally:
        if close:
            fh.close()


def save_roster(records: Iterable[ResearcherRecord]) -> str:
    """Serialize roster records to canonical CSV text (inverse of load)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ROSTER_HEADER)
    for r in records:
        history = "|".join(f"{e.effective_date.isoformat()}:{e.rank}" for e in r.rank_history)
        writer.writerow([r.researcher_id, r.gender, r.birth_year, r.sds, r.uda, r.university_id, history])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Publication I/O

_PUB_REQUIRED = ("publication_id", "year", "doc_type", "subject_categories", "citation_count", "byline")


def load_publications(source: str | Path | io.TextIOBase) -> list[PublicationRecord]:
    """Parse a JSON-lines publication file.

    Raises :class:`ParseError` with the line number on malformed rows and
    :class:`DuplicateIdError` on repeated publication ids.
    """
    name, fh, close = _open_text(source)
    try:
        pubs: list[PublicationRecord] = []
        seen: set[str] = set()
        for row_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", source=name, row=row_no) from exc
            missing = [k for k in _PUB_REQUIRED if k not in obj]
            if missing:
                raise ParseError(f"missing fields {missing}", source=name, row=row_no)
            pid = obj["publication_id"]
            if pid in seen:
                raise DuplicateIdError(f"duplicate publication_id {pid!r}", source=name, row=row_no)
            seen.add(pid)
            try:
                byline = tuple(
                    AuthorEntry(
                        position=int(a["position"]),
                        country=a.get("country"),
                        researcher_id=a.get("researcher_id"),
                        university_id=a.get("university_id"),
                    )
                    for a in obj["byline"]
                )
                pub = PublicationRecord(
                    publication_id=pid,
                    year=int(obj["year"]),
                    doc_type=obj["doc_type"],
                    subject_categories=tuple(obj["subject_categories"]),
                    citation_count=int(obj["citation_count"]),
                    byline=byline,
                )
            except (ValueError, TypeError, KeyError) as exc:
                raise ParseError(str(exc), source=name, row=row_no) from exc
            pubs.append(pub)
        return pubs
    finally:
        if close:
            fh.close()


def save_publications(pubs: Iterable[PublicationRecord]) -> str:
    """Serialize publications to canonical JSON-lines text (inverse of load)."""
    lines = []
    for p in pubs:
        byline = []
        for a in p.byline:
            entry: dict = {"position": a.position}
            if a.country is not None:
                entry["country"] = a.country
            if a.researcher_id is not None:
                entry["researcher_id"] = a.researcher_id
            if a.university_id is not None:
                entry["university_id"] = a.university_id
            byline.append(entry)
        obj = {
            "publication_id": p.publication_id,
            "year": p.year,
            "doc_type": p.doc_type,
            "subject_categories": list(p.subject_categories),
            "citation_count": p.citation_count,
            "byline": byline,
        }
        lines.append(json.dumps(obj, separators=(",", ":"), ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def link_roster(pubs: Sequence[PublicationRecord], roster: dict[str, ResearcherRecord]) -> list[PublicationRecord]:
    """Cross-validate byline entries against the roster.

    A roster-linked entry must carry the roster researcher's university id;
    a missing one is filled in, a conflicting one is an error.
    """
    out = []
    for p in pubs:
        fixed = []
        changed = False
        for a in p.byline:
            if a.researcher_id is not None and a.researcher_id in roster:
                expected = roster[a.researcher_id].university_id
                if a.university_id is None:
                    fixed.append(AuthorEntry(a.position, a.country, a.researcher_id, expected))
                    changed = True
                    continue
                if a.university_id != expected:
                    raise InputError(
                        f"publication {p.publication_id!r}: author {a.researcher_id!r} listed at "
                        f"{a.university_id!r} but roster says {expected!r}"
                    )
            fixed.append(a)
        if changed:
            p = PublicationRecord(
                p.publication_id, p.year, p.doc_type, p.subject_categories, p.citation_count, tuple(fixed)
            )
        out.append(p)
    return out


# ---------------------------------------------------------------------------
# Operations

def filter_document_types(
    pubs: Sequence[PublicationRecord],
    excluded: frozenset[str] | set[str] = DEFAULT_EXCLUDED_DOC_TYPES,
) -> list[PublicationRecord]:
    """Drop publications whose doc_type is in the excluded set, keeping order."""
    return [p for p in pubs if p.doc_type not in excluded]


def classify_collaboration(
    pub: PublicationRecord,
    focal: ResearcherRecord,
    roster: dict[str, ResearcherRecord],
    *,
    home_country: str = DEFAULT_HOME_COUNTRY,
    strict_roster_intra: bool = True,
    missing_country: str = "home",
) -> CollaborationProfile:
    """Classify a publication's collaboration pattern from the focal researcher's side.

    intra_university requires another author at the focal researcher's
    university; with ``strict_roster_intra`` only roster-linked co-authors
    qualify. extramural_domestic requires a home-country co-author outside
    that university, extramural_international a co-author abroad. Authors
    with no country are treated per ``missing_country``: "home" (default,
    with a logged warning) or "error".
    """
    if pub.author_of(focal.researcher_id) is None:
        raise ValueError(f"focal researcher {focal.researcher_id!r} is not on the byline of {pub.publication_id!r}")
    others = [a for a in pub.byline if a.researcher_id != focal.researcher_id]
    is_coauthored = len(pub.byline) > 1
    intra = domestic = international = False
    for a in others:
        country = a.country
        if country is None:
            if missing_country == "error":
                raise InputError(
                    f"publication {pub.publication_id!r}: author at position {a.position} has no country"
                )
            logger.warning(
                "publication %s: author at position %d has no country, treating as %s",
                pub.publication_id, a.position, home_country,
            )
            country = home_country
        same_university = a.university_id is not None and a.university_id == focal.university_id
        roster_linked = a.researcher_id is not None and a.researcher_id in roster
        if same_university and (roster_linked or not strict_roster_intra):
            intra = True
        if country == home_country and not same_university:
            domestic = True
        if country != home_country:
            international = True
    return CollaborationProfile(is_coauthored, intra, domestic, international)


def select_active_population(
    roster: dict[str, ResearcherRecord],
    pubs: Sequence[PublicationRecord],
    windows: Sequence[WindowSpec],
) -> set[str]:
    """Researchers with at least one attributed publication in every window."""
    if not windows:
        raise ValueError("at least one window is required")
    counts: dict[str, set[int]] = {}
    for p in pubs:
        for a in p.byline:
            if a.researcher_id is None or a.researcher_id not in roster:
                continue
            for w in windows:
                if w.contains(p.year):
                    counts.setdefault(a.researcher_id, set()).add(w.index)
    need = {w.index for w in windows}
    return {rid for rid, hit in counts.items() if hit >= need}


def rank_at(researcher: ResearcherRecord, date: datetime.date) -> int:
    """Academic rank in force on ``date`` (latest history entry at or before it)."""
    current = None
    for entry in researcher.rank_history:
        if entry.effective_date <= date:
            current = entry.rank
        else:
            break
    if current is None:
        raise ValueError(
            f"{date.isoformat()} precedes the rank history of researcher {researcher.researcher_id!r}"
        )
    return current


def _open_text(source) -> tuple[str, io.TextIOBase, bool]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise InputError(f"no such file: {path}")
        return str(path), path.open("r", encoding="utf-8"), True
    return getattr(source, "name", "<stream>"), source, False
