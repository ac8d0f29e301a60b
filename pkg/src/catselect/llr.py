"""Local association parameter of a joint event probability.

Given ``P(A)``, ``P(B)`` and ``P(A and B)`` the association ``w`` solves

    P(A and B) = L2(logit P(A), logit P(B), w).

Inverting ``L2`` in copula form gives ``w = (p - a b) / (p (1 - a)(1 - b))``,
which is the same closed form as ``1 - e^(u+v) (1/p - 1 - e^-u - e^-v)``
after substituting ``e^u = a / (1 - a)``, but free of cancellation.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

from .bilogistic import attainable_interval, check_probability, logistic_quantile
from .errors import DegenerateTable, DomainError, FrechetViolation, OutsideAttainableRange

#: |w| up to 1 + CLAMP_SLACK is treated as rounding noise and clamped to +-1
CLAMP_SLACK = 1e-9


class ClampWarning(UserWarning):
    """An association marginally outside [-1, 1] was clamped to the boundary."""


class EventTriple(NamedTuple):
    p_a: float
    p_b: float
    p_joint: float

    def frechet_bounds(self) -> tuple[float, float]:
        return max(self.p_a + self.p_b - 1.0, 0.0), min(self.p_a, self.p_b)


def omega_closed_form(a, b, p):
    """Association solving ``L2(logit a, logit b, w) = p``, no checks (vectorizes)."""
    return (p - a * b) / (p * (1.0 - a) * (1.0 - b))


def solve_association(p_a: float, p_b: float, p_joint: float) -> float:
    """Unique ``w`` in [-1, 1] reproducing ``p_joint`` from the two marginals.

    Raises :class:`FrechetViolation` when the triple is not a valid joint
    probability and :class:`OutsideAttainableRange` (carrying ``lo``/``hi``)
    when it is valid but beyond what the AMH family can represent.
    """
    check_probability(p_a, "p_a")
    check_probability(p_b, "p_b")
    triple = EventTriple(float(p_a), float(p_b), float(p_joint))
    lo_f, hi_f = triple.frechet_bounds()
    if not (lo_f <= triple.p_joint <= hi_f):
        raise FrechetViolation(
            f"p_joint={p_joint} outside Frechet bounds [{lo_f}, {hi_f}]",
            p_a=triple.p_a, p_b=triple.p_b, p_joint=triple.p_joint,
        )
    a, b, p = triple
    if p == 0.0:
        lo, hi = attainable_interval(logistic_quantile(a), logistic_quantile(b))
        raise OutsideAttainableRange("p_joint=0 is not attainable", lo=lo, hi=hi)
    w = omega_closed_form(a, b, p)
    if abs(w) > 1.0:
        if abs(w) > 1.0 + CLAMP_SLACK:
            lo, hi = attainable_interval(logistic_quantile(a), logistic_quantile(b))
            raise OutsideAttainableRange(
                f"p_joint={p} outside attainable range [{lo}, {hi}]",
                lo=lo, hi=hi, p_a=a, p_b=b, p_joint=p,
            )
        warnings.warn(f"association {w!r} clamped to the boundary", ClampWarning, stacklevel=2)
        w = 1.0 if w > 0 else -1.0
    return float(w)


def association_from_counts(n11: int, n10: int, n01: int, n00: int) -> float:
    """Association from a 2x2 table of counts.

    ``n11`` counts (A, B), ``n10`` counts (A, not B), ``n01`` (not A, B) and
    ``n00`` (neither).
    """
    counts = (n11, n10, n01, n00)
    if any(c < 0 for c in counts):
        raise DomainError("counts must be non-negative", counts=list(counts))
    margins = (n11 + n10, n01 + n00, n11 + n01, n10 + n00)
    if any(m == 0 for m in margins):
        raise DegenerateTable("a margin of the 2x2 table is zero", counts=list(counts))
    n = sum(counts)
    return solve_association((n11 + n10) / n, (n11 + n01) / n, n11 / n)
