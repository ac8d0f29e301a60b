"""Dense linear algebra, Newton maximization, bisection and finite differences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import NoBracket, NoConvergence, NotPositiveDefinite

log = logging.getLogger(__name__)


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    Raises :class:`NotPositiveDefinite` carrying the 0-based pivot at which
    the factorization broke down.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries", pivot=0)
    c, info = lapack.dpotrf(m, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(f"leading minor {info} is not positive", pivot=info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m x = rhs`` for symmetric positive definite ``m`` via Cholesky."""
    c = cholesky(m)
    rhs = np.asarray(rhs, dtype=float)
    x, info = lapack.dpotrs(c, rhs, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def inv_spd(m) -> np.ndarray:
    """Inverse of an SPD matrix (used only where the full matrix is reported)."""
    m = np.asarray(m, dtype=float)
    return symmetrize(solve_spd(m, np.eye(m.shape[0])))


def condition_number(m) -> float:
    """2-norm condition number of a symmetric matrix (inf when singular)."""
    ev = np.abs(np.linalg.eigvalsh(symmetrize(m)))
    if ev.min() == 0.0:
        return float("inf")
    return float(ev.max() / ev.min())


def fd_gradient(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f``; step scaled by ``max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def fd_jacobian(fun, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of vector-valued ``fun``, shape ``(len(fun(x)), len(x))``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (xp[i] - xm[i]))
    return np.stack(cols, axis=-1)


def bisect(f, lo: float, hi: float, tol: float = 1e-13, max_iter: int = 400) -> float:
    """Root of a continuous ``f`` bracketed by ``[lo, hi]``.

    Halves the bracket until its width is at most ``tol``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoBracket(f"f({lo})={flo} and f({hi})={fhi} have the same sign", lo=lo, hi=hi)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class NewtonOptions:
    tol: float = 1e-8
    max_iter: int = 200
    step_cap: float | None = None  # max absolute change per coordinate per step
    armijo: float = 1e-4
    max_halvings: int = 60
    fd_step: float = 1e-5


@dataclass
class NewtonDiagnostics:
    converged: bool
    iterations: int
    grad_norm: float
    fun: float
    hessian_cond: float = float("nan")
    loaded_steps: int = 0
    gradient_steps: int = 0
    history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "fun": self.fun,
            "hessian_cond": self.hessian_cond,
            "loaded_steps": self.loaded_steps,
            "gradient_steps": self.gradient_steps,
        }


def _ascent_direction(neg_h, g):
    """Newton direction with diagonal loading of ``-H`` until it factorizes."""
    try:
        return solve_spd(neg_h, g), False
    except NotPositiveDefinite:
        pass
    scale = max(float(np.max(np.abs(np.diag(neg_h)))), 1.0)
    tau = 1e-8 * scale
    eye = np.eye(len(g))
    while tau < 1e8 * scale:
        try:
            return solve_spd(neg_h + tau * eye, g), True
        except NotPositiveDefinite:
            tau *= 10.0
    return None, True


def newton_maximize(f, grad, x0, opts: NewtonOptions | None = None, hess=None):
    """Maximize ``f`` by damped Newton iterations.

    ``hess`` defaults to central finite differences of ``grad``.  The step is
    the Newton direction for ``-H`` (diagonally loaded when not positive
    definite), capped per coordinate by ``opts.step_cap``, and accepted by
    Armijo backtracking with halving.  When no Newton step improves ``f`` a
    plain gradient step is tried.

    Returns ``(x, NewtonDiagnostics)``; raises :class:`NoConvergence` whose
    ``best`` attribute holds the last accepted iterate.
    """
    opts = opts or NewtonOptions()
    x = np.array(x0, dtype=float)
    fx = f(x)
    g = np.asarray(grad(x), dtype=float)
    diag = NewtonDiagnostics(False, 0, float(np.linalg.norm(g)), float(fx))
    if not np.isfinite(fx):
        raise NoConvergence("objective is not finite at the starting point", best=x, diagnostics=diag.as_dict())

    def hessian(xx):
        if hess is not None:
            return symmetrize(hess(xx))
        return symmetrize(fd_jacobian(grad, xx, opts.fd_step))

    for it in range(opts.max_iter):
        gnorm = float(np.linalg.norm(g))
        diag.iterations, diag.grad_norm, diag.fun = it, gnorm, float(fx)
        diag.history.append(float(fx))
        if gnorm <= opts.tol:
            diag.converged = True
            break
        neg_h = -hessian(x)
        d, loaded = _ascent_direction(neg_h, g)
        diag.loaded_steps += int(loaded)
        candidates = [d] if d is not None else []
        candidates.append(g / max(1.0, float(np.max(np.abs(np.diag(neg_h))))))
        accepted = False
        for k, direction in enumerate(candidates):
            if opts.step_cap is not None:
                big = float(np.max(np.abs(direction)))
                if big > opts.step_cap:
                    direction = direction * (opts.step_cap / big)
            slope = float(g @ direction)
            if slope <= 0:
                continue
            noise = 1e3 * np.finfo(float).eps * max(1.0, abs(fx))
            if slope <= noise:
                # predicted gain is below the resolution of f: trust the local model
                xn = x + direction
                fn = f(xn)
                if np.isfinite(fn) and fn >= fx - noise:
                    accepted = True
                    break
            t = 1.0
            for _ in range(opts.max_halvings):
                xn = x + t * direction
                fn = f(xn)
                if np.isfinite(fn) and fn >= fx + opts.armijo * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                diag.gradient_steps += int(k == len(candidates) - 1)
                break
        if not accepted:
            # no representable improvement left; stationary up to rounding
            g_here = float(np.linalg.norm(g))
            diag.grad_norm = g_here
            if g_here <= opts.tol:
                diag.converged = True
                break
            log.debug("line search failed at iteration %d (|g|=%g)", it, g_here)
            raise NoConvergence("line search failed to improve the objective",
                                best=x, diagnostics=diag.as_dict())
        x, fx = xn, fn
        g = np.asarray(grad(x), dtype=float)
    else:
        diag.iterations = opts.max_iter
        diag.grad_norm = float(np.linalg.norm(g))
        diag.fun = float(fx)
        if diag.grad_norm <= opts.tol:
            diag.converged = True
        else:
            raise NoConvergence(f"no convergence after {opts.max_iter} iterations",
                                best=x, diagnostics=diag.as_dict())
    try:
        diag.hessian_cond = condition_number(hessian(x))
    except np.linalg.LinAlgError:
        pass
    return x, diag
