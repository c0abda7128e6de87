"""Run configuration: defaults, JSON files, and command-line overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import DEFAULT_EXCLUDED_DOC_TYPES, DEFAULT_HOME_COUNTRY
from .errors import InputError


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run can be told, with sensible defaults.

    A JSON config file may set any subset of these fields; command-line
    flags override the file, which overrides the defaults.
    """

    # inputs
    roster: str | None = None
    publications: str | None = None
    panel: str | None = None
    # observation windows and corpus handling
    first_year: int = 2001
    window_length: int = 3
    window_count: int = 4
    home_country: str = DEFAULT_HOME_COUNTRY
    weighted_udas: tuple[str, ...] = ()
    excluded_doc_types: tuple[str, ...] = tuple(sorted(DEFAULT_EXCLUDED_DOC_TYPES))
    strict_roster_intra: bool = True
    missing_country: str = "home"
    # modelling
    variants: tuple[str, ...] = ("A", "B", "C", "D")
    moments: str = "robust"
    include_c: bool = False
    time_effect: str = "dummies"
    alpha: float = 0.05
    max_iter: int = 500
    gtol: float = 1e-8
    # simulation
    seed: int = 20170904
    n_researchers: int = 500
    waves: int = 4
    truth_variant: str = "D"
    round_rank: bool = False
    # execution
    threads: int = 1

    def __post_init__(self):
        if self.moments not in ("robust", "classical"):
            raise InputError(f"moments must be 'robust' or 'classical', not {self.moments!r}")
        if self.missing_country not in ("home", "error"):
            raise InputError("missing_country must be 'home' or 'error'")
        bad = [v for v in self.variants if v not in ("A", "B", "C", "D")]
        if bad:
            raise InputError(f"unknown variant(s): {bad}")
        if self.threads < 1:
            raise InputError("threads must be at least 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"no such config file: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise InputError(f"config {path} must hold a JSON object")
        return cls.from_mapping(raw, source=str(path))

    @classmethod
    def from_mapping(cls, raw: dict, source: str = "<config>") -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise InputError(f"{source}: unknown config key(s): {', '.join(unknown)}")
        values = {}
        for key, value in raw.items():
            if isinstance(value, list):
                value = tuple(value)
            values[key] = value
        try:
            return cls(**values)
        except TypeError as exc:
            raise InputError(f"{source}: {exc}") from exc

    def merged(self, **overrides) -> "RunConfig":
        """A copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        for key in ("variants", "weighted_udas", "excluded_doc_types"):
            if key in changes and isinstance(changes[key], list):
                changes[key] = tuple(changes[key])
        return dataclasses.replace(self, **changes)
