"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`InputError` -> 2,
:class:`ConvergenceError` -> 3, :class:`ModelSpecError` -> 4.
"""

from __future__ import annotations


class PanelforgeError(Exception):
    """Base class for all panelforge errors."""


class InputError(PanelforgeError):
    """Bad user-supplied data or configuration."""


class ParseError(InputError):
    """A roster/publication file could not be parsed.

    Carries the offending source name and 1-based row number when known.
    """

    def __init__(self, message: str, *, source: str | None = None, row: int | None = None):
        prefix = ""
        if source is not None:
            prefix = source
        if row is not None:
            prefix = f"{prefix}:row {row}" if prefix else f"row {row}"
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.source = source
        self.row = row


class DuplicateIdError(ParseError):
    """Two records share an identifier that must be unique."""


class BaselineUndefinedError(PanelforgeError):
    """No cited publications exist in a (year, subject category) cell."""

    def __init__(self, year: int, category: str):
        super().__init__(f"no cited publications in baseline cell ({year}, {category!r})")
        self.year = year
        self.category = category


class DegenerateGroupError(PanelforgeError):
    """A scaling group has zero mean, so scaled values are undefined."""


class BalanceError(InputError):
    """A panel is not balanced (some researcher misses a wave)."""


class CollinearityError(PanelforgeError):
    """A predictor is an exact linear combination of the others."""

    def __init__(self, predictor: str):
        super().__init__(f"predictor {predictor!r} is exactly collinear with the others")
        self.predictor = predictor


class DegenerateColumnError(PanelforgeError):
    """A column has zero variance where variation is required."""

    def __init__(self, column: str):
        super().__init__(f"column {column!r} has zero variance")
        self.column = column


class ModelSpecError(PanelforgeError):
    """A model specification is structurally invalid."""


class NestingError(ModelSpecError):
    """A chi-square difference test was applied to non-nested fits."""


class NotPositiveDefiniteError(PanelforgeError):
    """A covariance matrix required to be positive definite is not."""


class IdentificationError(PanelforgeError):
    """The information matrix is rank deficient: model not identified."""


class ConvergenceError(PanelforgeError):
    """The optimizer did not converge; ``result`` holds the best-so-far fit."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class StabilityError(ModelSpecError):
    """Simulation parameters imply a non-stationary process."""


class AlignmentError(PanelforgeError):
    """Parameter ids of a fit do not align with the reference values."""
