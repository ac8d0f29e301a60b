"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class CatSelectError(Exception):
    """Base class for all package errors."""

    #: short machine-readable name used in CLI error payloads
    kind = "CatSelectError"

    def __init__(self, message: str, **detail):
        super().__init__(message)
        self.detail = detail

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), "detail": self.detail}


class DomainError(CatSelectError, ValueError):
    pass


class FrechetViolation(CatSelectError, ValueError):
    pass


class OutsideAttainableRange(CatSelectError, ValueError):
    def __init__(self, message: str, lo: float, hi: float, **detail):
        super().__init__(message, lo=lo, hi=hi, **detail)
        self.lo = lo
        self.hi = hi


class DegenerateTable(CatSelectError, ValueError):
    pass


class IdentificationError(CatSelectError):
    """Failure of one of the closed-form recovery steps.

    ``category`` is the 1-based index of the offending outcome category,
    when the failure can be attributed to one.
    """

    def __init__(self, message: str, category: int | None = None, **detail):
        super().__init__(message, category=category, **detail)
        self.category = category


class InvalidTable(IdentificationError, ValueError):
    pass


class RelevanceViolation(IdentificationError):
    pass


class NonIdentified(IdentificationError):
    pass


class SimplexViolation(IdentificationError):
    pass


class InteriorityViolation(IdentificationError):
    pass


class InfeasibleDGP(CatSelectError):
    pass


class NonFiniteLik(CatSelectError, FloatingPointError):
    def __init__(self, message: str, row: int, **detail):
        super().__init__(message, row=row, **detail)
        self.row = row


class RankDeficient(CatSelectError, ValueError):
    pass


class SeparationDetected(CatSelectError):
    pass


class NoConvergence(CatSelectError):
    def __init__(self, message: str, best=None, diagnostics: dict | None = None):
        super().__init__(message, diagnostics=diagnostics or {})
        self.best = best
        self.diagnostics = diagnostics or {}


class SingularInformation(CatSelectError, ValueError):
    pass


class NotPositiveDefinite(CatSelectError, ValueError):
    def __init__(self, message: str, pivot: int):
        super().__init__(message, pivot=pivot)
        self.pivot = pivot


class NoBracket(CatSelectError, ValueError):
    pass


class TooManyFailures(CatSelectError):
    pass


class InputError(CatSelectError, ValueError):
    """Malformed user input (CSV/JSON schema violations)."""
