"""Logistic and Ali-Mikhail-Haq bivariate logistic primitives.

Every function accepts Python floats or numpy arrays (broadcast
elementwise).  The AMH joint CDF is evaluated through its copula form

    L2(u, v, w) = a * b / (1 - w * (1 - a) * (1 - b)),   a = L(u), b = L(v),

which is algebraically identical to ``1 / (1 + e^-u + e^-v + (1 - w) e^-u-v)``
but never forms ``e^-u`` and therefore cannot overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError


def check_probability(p, name: str = "p"):
    """Return ``p`` as float/ndarray after checking it lies in the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)", value=_jsonable(p))
    return p if arr.ndim else float(arr)


def check_log_odds(u, name: str = "u"):
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite", value=_jsonable(u))
    return u if arr.ndim else float(arr)


def check_association(w, name: str = "omega"):
    arr = np.asarray(w, dtype=float)
    if not np.all((arr >= -1.0) & (arr <= 1.0)):
        raise DomainError(f"{name} must lie in [-1, 1]", value=_jsonable(w))
    return w if arr.ndim else float(arr)


def _jsonable(x):
    arr = np.asarray(x, dtype=float)
    return arr.tolist()


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def logistic_cdf(u):
    """Standard logistic CDF ``1 / (1 + exp(-u))``, stable for any finite ``u``."""
    return _out(expit(np.asarray(u, dtype=float)))


def logistic_quantile(p):
    """Inverse of :func:`logistic_cdf`; raises :class:`DomainError` outside (0, 1)."""
    check_probability(p)
    return _out(logit(np.asarray(p, dtype=float)))


def _amh_pieces(u, v, w):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    a, abar = expit(u), expit(-u)
    b, bbar = expit(v), expit(-v)
    den = 1.0 - w * abar * bbar
    return a, abar, b, bbar, w, den


def amh_joint(u, v, w):
    """AMH bivariate logistic CDF evaluated at log-odds ``u``, ``v`` and association ``w``."""
    check_association(w)
    a, _, b, _, _, den = _amh_pieces(u, v, w)
    return _out(a * b / den)


def amh_log_partials(u, v, w):
    """Joint probability and the partials of its logarithm.

    Returns ``(P, dlogP/du, dlogP/dv, dlogP/dw)``.  No domain check; this is
    the vectorized kernel used inside likelihood evaluations.
    """
    a, abar, b, bbar, w, den = _amh_pieces(u, v, w)
    p = a * b / den
    d_u = abar * (1.0 - w * bbar) / den
    d_v = bbar * (1.0 - w * abar) / den
    d_w = abar * bbar / den
    return p, d_u, d_v, d_w


def amh_partials(u, v, w):
    """Partial derivatives ``(dL2/du, dL2/dv, dL2/dw)`` of the AMH joint CDF.

    Equal to ``L2**2 * (e^-u + (1-w) e^-u-v)``, ``L2**2 * (e^-v + (1-w) e^-u-v)``
    and ``L2**2 * e^-u-v`` respectively, computed without exponentials of
    large arguments.
    """
    check_association(w)
    p, d_u, d_v, d_w = amh_log_partials(u, v, w)
    return _out(p * d_u), _out(p * d_v), _out(p * d_w)


def attainable_interval(u, v):
    """Range ``(lo, hi)`` of ``amh_joint(u, v, .)`` as the association runs over [-1, 1].

    Strictly narrower than the Frechet interval of the two marginals.
    """
    return amh_joint(u, v, -1.0), amh_joint(u, v, 1.0)
