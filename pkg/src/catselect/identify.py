"""Closed-form recovery of the latent categorical distribution under selection.

Observed: ``p_joint[k, z] = P(Y = c_k, S = 1 | Z = z)`` for the ``q - 1``
non-baseline categories and ``p_sel[z] = P(S = 1 | Z = z)`` for a binary
instrument.  Latent: the category logits ``mu`` (baseline ``mu_q = 0``) and
the category-specific associations ``omega`` that are invariant in ``z``.

Recovery runs in three closed-form steps:

1. ``lambda*_k`` = logit of ``pi_k`` from the two instrument values,
2. ``pi`` and ``mu`` from the ``lambda*`` vector via the simplex constraint,
3. ``omega_k`` from either instrument value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .bilogistic import amh_joint, check_probability
from .errors import (
    DegenerateTable,
    IdentificationError,
    InfeasibleDGP,
    InteriorityViolation,
    InvalidTable,
    NonIdentified,
    RelevanceViolation,
    SimplexViolation,
)
from .llr import omega_closed_form

RELEVANCE_TOL = 1e-12
INTERIOR_HARD = 1.0 - 1e-12
INTERIOR_WARN = 0.999


@dataclass
class ObservedSelectionTable:
    """The ``2q - 1`` observable scalars for a binary instrument."""

    q: int
    p_joint: np.ndarray  # shape (q - 1, 2)
    p_sel: np.ndarray  # shape (2,)

    def __post_init__(self):
        self.p_joint = np.array(self.p_joint, dtype=float).reshape(-1, 2) if np.size(self.p_joint) else np.zeros((0, 2))
        self.p_sel = np.array(self.p_sel, dtype=float)

    @property
    def nu(self) -> np.ndarray:
        return logit(self.p_sel)

    @property
    def n_observables(self) -> int:
        """Scalars consumed by identification: ``2 (q - 1)`` joint cells plus two selection rates."""
        return self.p_joint.size + self.p_sel.size

    def validate(self) -> "ObservedSelectionTable":
        if int(self.q) != self.q or self.q < 2:
            raise InvalidTable(f"q must be an integer >= 2, got {self.q}")
        if self.p_joint.shape != (self.q - 1, 2):
            raise InvalidTable(f"p_joint must have shape ({self.q - 1}, 2), got {self.p_joint.shape}")
        if self.p_sel.shape != (2,):
            raise InvalidTable(f"p_sel must have two entries, got {self.p_sel.shape}")
        for z in range(2):
            if not 0.0 < self.p_sel[z] < 1.0:
                raise InvalidTable(f"p_sel[{z}]={self.p_sel[z]} not in (0, 1)")
        for k in range(self.q - 1):
            for z in range(2):
                if not 0.0 < self.p_joint[k, z] < 1.0:
                    raise InvalidTable(f"p_joint[{k + 1}][{z}]={self.p_joint[k, z]} not in (0, 1)",
                                       category=k + 1)
        mass = self.p_joint.sum(axis=0)
        for z in range(2):
            if not mass[z] < self.p_sel[z]:
                raise InvalidTable(
                    f"non-baseline selected mass {mass[z]} >= p_sel[{z}]={self.p_sel[z]}"
                    " leaves no room for the baseline category",
                    z=z,
                )
        if not self.p_sel[0] < self.p_sel[1]:
            raise RelevanceViolation(
                f"relevance requires p_sel[0] < p_sel[1]; got {self.p_sel[0]} and {self.p_sel[1]}"
            )
        return self

    def to_dict(self) -> dict:
        return {"q": int(self.q), "p_sel": self.p_sel.tolist(), "p_joint": self.p_joint.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservedSelectionTable":
        return cls(q=d["q"], p_joint=d["p_joint"], p_sel=d["p_sel"])


@dataclass
class LatentCategorical:
    """Latent outcome distribution and selection associations.

    ``mu``, ``lambda_`` and ``omega`` have length ``q - 1``; ``pi`` has
    length ``q`` with the baseline last.
    """

    mu: np.ndarray
    lambda_: np.ndarray
    omega: np.ndarray
    pi: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return len(self.pi)

    @classmethod
    def from_pi(cls, pi, omega) -> "LatentCategorical":
        pi = np.asarray(pi, dtype=float)
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a strictly positive probability vector")
        pi = pi / pi.sum()
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (len(pi) - 1,):
            raise ValueError("omega must have q - 1 entries")
        if np.any(np.abs(omega) >= 1.0):
            raise ValueError("omega must lie strictly inside (-1, 1)")
        return cls(mu=np.log(pi[:-1] / pi[-1]), lambda_=logit(pi[:-1]), omega=omega, pi=pi)

    @classmethod
    def from_mu(cls, mu, omega) -> "LatentCategorical":
        eta = np.append(np.asarray(mu, dtype=float), 0.0)
        pi = np.exp(eta - np.logaddexp.reduce(eta))
        return cls.from_pi(pi / pi.sum(), omega)

    def to_dict(self) -> dict:
        return {
            "pi": self.pi.tolist(),
            "mu": self.mu.tolist(),
            "lambda": self.lambda_.tolist(),
            "omega": self.omega.tolist(),
            "diagnostics": self.diagnostics,
        }


def forward_map(latent: LatentCategorical, nu0: float, nu1: float) -> ObservedSelectionTable:
    """Observable table implied by a latent model and two selection log-odds."""
    if nu0 == nu1:
        raise RelevanceViolation("nu0 and nu1 must differ")
    nu = np.array([nu0, nu1], dtype=float)
    p_joint = amh_joint(latent.lambda_[:, None], nu[None, :], latent.omega[:, None])
    p_sel = expit(nu)
    mass = p_joint.sum(axis=0)
    for z in range(2):
        if mass[z] >= p_sel[z]:
            raise InfeasibleDGP(
                f"implied baseline selected mass {p_sel[z] - mass[z]} <= 0 at z={z}", z=z
            )
    return ObservedSelectionTable(q=latent.q, p_joint=p_joint, p_sel=p_sel)


def _step1_parts(p_k0, p_k1, nu0, nu1):
    # numerator and denominator of exp(lambda*), both rescaled by exp(-max(nu))
    m = max(nu0, nu1)
    e0, e1 = math.exp(nu0 - m), math.exp(nu1 - m)
    num = e0 - e1
    den = e0 * (1.0 / p_k0 - 1.0) - e1 * (1.0 / p_k1 - 1.0)
    return num, den, e0, e1


def step1_condition(p_k0: float, p_k1: float, nu0: float, nu1: float) -> float:
    """Relative sensitivity of ``lambda*`` to relative errors in the two joint cells.

    Equals ``(e^nu0 / p_k0 + e^nu1 / p_k1) / |den|`` where ``den`` is the
    denominator of the closed-form ratio; it diverges as ``nu0 -> nu1``.
    """
    _, den, e0, e1 = _step1_parts(p_k0, p_k1, nu0, nu1)
    if den == 0.0:
        return float("inf")
    return (e0 / p_k0 + e1 / p_k1) / abs(den)


def recover_lambda_star(p_k0: float, p_k1: float, nu0: float, nu1: float) -> float:
    """Logit of the latent probability of one category from its two joint cells.

    Uses ``exp(lambda) = (e^nu0 - e^nu1) / (e^nu0 (1/p_k0 - 1) - e^nu1 (1/p_k1 - 1))``.
    """
    check_probability(p_k0, "p_k0")
    check_probability(p_k1, "p_k1")
    if abs(nu0 - nu1) <= RELEVANCE_TOL:
        raise RelevanceViolation(f"instrument does not shift selection: nu0={nu0}, nu1={nu1}")
    num, den, _, _ = _step1_parts(p_k0, p_k1, nu0, nu1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den if den != 0.0 else float("nan")
    if not (math.isfinite(ratio) and ratio > 0.0):
        raise NonIdentified(
            f"step-1 ratio {ratio} is not strictly positive; cells inconsistent with the model",
            numerator=num, denominator=den,
        )
    return math.log(ratio)


def recover_mu(lambda_star) -> tuple[np.ndarray, np.ndarray]:
    """Map the per-category logits to ``(mu, pi)`` with the baseline last."""
    lam = np.asarray(lambda_star, dtype=float)
    pi_k = expit(lam)
    beta = float(pi_k.sum())
    if not beta < 1.0:
        raise SimplexViolation(f"non-baseline probabilities sum to {beta} >= 1", total=beta)
    s = beta / (1.0 - beta)
    mu = np.log(pi_k * (s + 1.0))
    pi = np.append(pi_k, 1.0 - beta)
    return mu, pi / pi.sum()


def recover_omega(lambda_k: float, nu0: float, p_k0: float) -> float:
    """Association of one category from its latent logit and one instrument value."""
    check_probability(p_k0, "p_k0")
    w = _omega_from_logits(lambda_k, nu0, p_k0)
    if not abs(w) < INTERIOR_HARD:
        raise InteriorityViolation(f"recovered association {w} is not interior", omega=w)
    return w


def _omega_from_logits(lambda_k, nu, p):
    a, b = expit(lambda_k), expit(nu)
    abar, bbar = expit(-lambda_k), expit(-nu)
    return float((p - a * b) / (p * abar * bbar))


def identify_all(table: ObservedSelectionTable) -> LatentCategorical:
    """Point-identify ``(mu, omega, pi)`` from an observed selection table.

    The result's ``diagnostics`` carry the step-1 condition numbers, the gap
    between the associations implied by the two instrument values, and
    warnings for associations close to the boundary.
    """
    table.validate()
    nu0, nu1 = (float(v) for v in table.nu)
    q = table.q
    lam = np.empty(q - 1)
    cond = np.empty(q - 1)
    for k in range(q - 1):
        p0, p1 = table.p_joint[k]
        try:
            lam[k] = recover_lambda_star(p0, p1, nu0, nu1)
        except IdentificationError as exc:
            exc.category = k + 1
            exc.detail["category"] = k + 1
            raise
        cond[k] = step1_condition(p0, p1, nu0, nu1)
    mu, pi = recover_mu(lam)
    omega = np.empty(q - 1)
    gaps = np.empty(q - 1)
    warnings = []
    for k in range(q - 1):
        try:
            omega[k] = recover_omega(lam[k], nu0, table.p_joint[k, 0])
        except IdentificationError as exc:
            exc.category = k + 1
            exc.detail["category"] = k + 1
            raise
        gaps[k] = abs(omega[k] - _omega_from_logits(lam[k], nu1, table.p_joint[k, 1]))
        if abs(omega[k]) >= INTERIOR_WARN:
            warnings.append(f"category {k + 1}: |omega|={abs(omega[k]):.6g} is near the boundary")
    diagnostics = {
        "condition": float(cond.max()),
        "condition_per_category": cond.tolist(),
        "omega_z_gap": float(gaps.max()),
        "warnings": warnings,
    }
    return LatentCategorical(mu=mu, lambda_=lam, omega=omega, pi=pi, diagnostics=diagnostics)


def rebaseline(table: ObservedSelectionTable, baseline: int) -> ObservedSelectionTable:
    """Reorder categories so that ``baseline`` (1-based) becomes the last one."""
    table.validate()
    q = table.q
    if not 1 <= baseline <= q:
        raise ValueError(f"baseline must be in 1..{q}")
    full = np.vstack([table.p_joint, table.p_sel - table.p_joint.sum(axis=0)])
    order = [k for k in range(q) if k != baseline - 1] + [baseline - 1]
    return ObservedSelectionTable(q=q, p_joint=full[order[:-1]], p_sel=table.p_sel.copy())


def table_from_data(s, y, z, q: int) -> ObservedSelectionTable:
    """Empirical selection table from microdata with a binary instrument.

    ``y`` holds categories 1..q for selected rows (ignored elsewhere).  Empty
    cells raise :class:`DegenerateTable`; there is no smoothing.
    """
    s = np.asarray(s).astype(int)
    z = np.asarray(z)
    y = np.asarray(y)
    if not set(np.unique(z).tolist()) <= {0, 1}:
        raise InvalidTable("instrument must be binary 0/1 for the closed-form identification")
    p_joint = np.empty((q - 1, 2))
    p_sel = np.empty(2)
    for zz in range(2):
        rows = z == zz
        n_z = int(rows.sum())
        if n_z == 0:
            raise DegenerateTable(f"no observations with z={zz}")
        sel = rows & (s == 1)
        p_sel[zz] = sel.sum() / n_z
        for k in range(q - 1):
            c = int((sel & (y == k + 1)).sum())
            if c == 0:
                raise DegenerateTable(f"empty cell: category {k + 1}, z={zz}", category=k + 1, z=zz)
            p_joint[k, zz] = c / n_z
    return ObservedSelectionTable(q=q, p_joint=p_joint, p_sel=p_sel)


def pairwise_tables(p_joint, p_sel) -> list[tuple[tuple[int, int], ObservedSelectionTable]]:
    """All instrument-value pairs from a multi-valued instrument.

    ``p_joint`` has shape ``(q - 1, m)`` and ``p_sel`` length ``m``.  Each
    pair is ordered so that selection is increasing.
    """
    p_joint = np.asarray(p_joint, dtype=float)
    p_sel = np.asarray(p_sel, dtype=float)
    q = p_joint.shape[0] + 1
    out = []
    for i, j in itertools.combinations(range(len(p_sel)), 2):
        if p_sel[i] > p_sel[j]:
            i, j = j, i
        out.append(((i, j), ObservedSelectionTable(q=q, p_joint=p_joint[:, [i, j]], p_sel=p_sel[[i, j]])))
    return out


@dataclass
class OverIdReport:
    max_mu_discrepancy: float
    max_omega_discrepancy: float
    tolerance: float
    flagged: bool
    estimates: list

    def to_dict(self) -> dict:
        return {
            "max_mu_discrepancy": self.max_mu_discrepancy,
            "max_omega_discrepancy": self.max_omega_discrepancy,
            "tolerance": self.tolerance,
            "flagged": self.flagged,
            "estimates": self.estimates,
        }


def overidentification_check(tables, tol: float = 1e-6) -> OverIdReport:
    """Compare identification across instrument pairs.

    ``tables`` is a sequence of ``ObservedSelectionTable`` (or ``(label,
    table)`` pairs, as produced by :func:`pairwise_tables`) covering at least
    three instrument values.  Discrepancies above ``tol`` are flagged.
    """
    items = [t if isinstance(t, tuple) else (i, t) for i, t in enumerate(tables)]
    if len(items) < 3:
        raise ValueError("overidentification needs at least three instrument values (three pairs)")
    fits = []
    for label, table in items:
        try:
            fits.append((label, identify_all(table)))
        except IdentificationError as exc:
            exc.detail["pair"] = label
            raise
    mus = np.array([f.mu for _, f in fits])
    omegas = np.array([f.omega for _, f in fits])
    d_mu = float(np.max(mus.max(axis=0) - mus.min(axis=0)))
    d_om = float(np.max(omegas.max(axis=0) - omegas.min(axis=0)))
    estimates = [{"pair": list(label) if isinstance(label, tuple) else label,
                  "mu": f.mu.tolist(), "omega": f.omega.tolist()} for label, f in fits]
    return OverIdReport(d_mu, d_om, tol, bool(max(d_mu, d_om) > tol), estimates)
