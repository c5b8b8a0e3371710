"""Exception hierarchy for lsfem.

Input problems derive from :class:`ValueError` so callers can keep catching the
builtin type; numerical breakdowns derive from :class:`ArithmeticError`. The
command line maps the first family to exit code 2 and the second to exit code 3.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from lsfem.linalg import SolveReport


class LsfemError(Exception):
    """Base class for all errors raised by lsfem."""


class MeshError(LsfemError, ValueError):
    """A triangulation violates one of the mesh invariants."""

    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        message = f"mesh invariant violated: {invariant}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class MeshFormatError(LsfemError, ValueError):
    """A mesh file could not be parsed."""

    def __init__(self, line: int, detail: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {detail}")


class QuadratureError(LsfemError, ValueError):
    """Requested quadrature degree is not supported."""


class UnsupportedElementError(LsfemError, ValueError):
    """Unknown space descriptor or element pair."""


class DegenerateSpaceError(LsfemError, ValueError):
    """A scalar space has no free degrees of freedom."""


class CoefficientError(LsfemError, ValueError):
    """A coefficient violates its admissibility condition."""


class ProblemError(LsfemError, ValueError):
    """Unknown, inconsistent, or incomplete problem definition."""


class ConfigError(LsfemError, ValueError):
    """Invalid study configuration."""


class SolverError(LsfemError, ArithmeticError):
    """The linear solver did not reach the requested tolerance."""

    def __init__(self, message: str, report: SolveReport | None = None) -> None:
        self.report = report
        super().__init__(message)


class LocalSolveError(LsfemError, ArithmeticError):
    """An element-local system turned out singular."""

    def __init__(self, element: int, detail: str = "") -> None:
        self.element = element
        message = f"singular local system on element {element}"
        if detail:
            message += f": {detail}"
        super().__init__(message)
