"""Two-step multinomial logit with sample selection.

Model, for selected rows ``S = 1`` and non-baseline category ``k``::

    P(Y = c_k, S = 1 | W) = L2(u_k(X), W'delta, tanh(X'gamma_k))
    u_k(X) = X'beta_k - log sum_{j != k} exp(X'beta_j),   beta_q = 0

Step 1 fits ``delta`` by a logit of ``S`` on ``W = (X, Z)``.  Step 2
maximizes the selected-sample log-likelihood over
``theta = (beta_1..beta_{q-1}, gamma_1..gamma_{q-1})`` with ``delta`` held
at its first-step value.  The variance of ``theta`` accounts for the
estimated ``delta``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .bilogistic import amh_log_partials
from .errors import (
    InputError,
    NoConvergence,
    NonFiniteLik,
    NonIdentified,
    NotPositiveDefinite,
    RankDeficient,
    SeparationDetected,
    SingularInformation,
)
from .numerics import (
    NewtonOptions,
    condition_number,
    fd_jacobian,
    inv_spd,
    newton_maximize,
    symmetrize,
)

log = logging.getLogger(__name__)

_OMEGA_EDGE = 1.0 - 2.0**-53
ILL_CONDITIONED = 1e8  # cond(A) above this is flagged; above 1e12 it is an error


class NonIdentifiedWarning(UserWarning):
    pass


@dataclass
class Dataset:
    """Microdata for the selection model.

    ``y`` holds categories ``1..q`` for selected rows and 0 elsewhere.  ``x``
    is ``(n, d_x)`` and should contain the intercept column.  ``z`` is the
    instrument (``None`` when no excluded instrument is available).
    """

    s: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None
    q: int
    x_names: list[str] | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x.shape[0] != self.s.shape[0] and self.x.shape[1] == self.s.shape[0]:
            self.x = self.x.T
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float)
        if self.x_names is None:
            self.x_names = [f"x{j + 1}" for j in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def w(self) -> np.ndarray:
        if self.z is None:
            return self.x
        return np.column_stack([self.x, self.z])

    @property
    def w_names(self) -> list[str]:
        return list(self.x_names) + ([] if self.z is None else ["z"])

    def onehot(self) -> np.ndarray:
        """``(n, q)`` indicators ``1{Y = c_k, S = 1}``."""
        ind = np.zeros((self.n, self.q))
        sel = self.s == 1
        ind[np.flatnonzero(sel), self.y[sel] - 1] = 1.0
        return ind

    def validate(self) -> "Dataset":
        n = self.n
        if self.q < 2:
            raise InputError("q must be at least 2")
        if self.y.shape != (n,) or self.x.shape[0] != n or (self.z is not None and self.z.shape != (n,)):
            raise InputError("s, y, x and z must have the same number of rows")
        if not np.all(np.isin(self.s, (0, 1))):
            raise InputError("s must be binary 0/1")
        if not np.all(np.isfinite(self.x)) or (self.z is not None and not np.all(np.isfinite(self.z))):
            raise InputError("x and z must be finite")
        sel = self.s == 1
        bad = np.flatnonzero(sel & ((self.y < 1) | (self.y > self.q)))
        if bad.size:
            raise InputError(f"row {bad[0]}: selected row needs y in 1..{self.q}", row=int(bad[0]))
        bad = np.flatnonzero(~sel & (self.y != 0))
        if bad.size:
            raise InputError(f"row {bad[0]}: y present for an unselected row", row=int(bad[0]))
        return self


@dataclass
class ModelParams:
    delta: np.ndarray  # (d_w,)
    beta: np.ndarray  # (q - 1, d_x); beta_q = 0 is implicit
    gamma: np.ndarray  # (q - 1, d_x)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if self.beta.shape != self.gamma.shape:
            raise ValueError("beta and gamma must have the same shape")

    @property
    def q(self) -> int:
        return self.beta.shape[0] + 1

    @property
    def d_x(self) -> int:
        return self.beta.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta.ravel(), self.gamma.ravel()])

    @classmethod
    def from_theta(cls, theta, delta, q: int, d_x: int) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        m = (q - 1) * d_x
        return cls(delta=delta, beta=theta[:m].reshape(q - 1, d_x), gamma=theta[m:].reshape(q - 1, d_x))

    def to_dict(self) -> dict:
        return {"delta": self.delta.tolist(), "beta": self.beta.tolist(), "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(delta=d["delta"], beta=d["beta"], gamma=d["gamma"])


def theta_names(q: int, x_names) -> list[str]:
    names = [f"beta{k}[{c}]" for k in range(1, q) for c in x_names]
    return names + [f"gamma{k}[{c}]" for k in range(1, q) for c in x_names]


@dataclass
class EstimatorConfig:
    include_baseline_term: bool = False
    literal_scores: bool = False
    max_iter: int = 200
    tol: float = 1e-8
    step_cap: float = 5.0
    fd_step: float = 1e-5
    saturation_threshold: float = 15.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    params: ModelParams
    vtheta: np.ndarray
    std_errors: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    n: int
    names: list[str]
    delta_se: np.ndarray
    variants: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# index functions
# ---------------------------------------------------------------------------


def _leave_one_out_lse(eta_all: np.ndarray) -> np.ndarray:
    """``log sum_{j != k} exp(eta_j)`` for each non-baseline ``k``; last column is the baseline."""
    q = eta_all.shape[1]
    out = np.empty((eta_all.shape[0], q - 1))
    for k in range(q - 1):
        out[:, k] = logsumexp(np.delete(eta_all, k, axis=1), axis=1)
    return out


def category_index(x, beta, k: int) -> float:
    """Log-odds ``u_k = x'beta_k - log sum_{j != k} exp(x'beta_j)`` of category ``k`` (1-based, k < q).

    ``beta`` is ``(q - 1, d_x)``; the baseline's ``exp(0) = 1`` is included in
    the sum.  ``logistic_cdf(u_k)`` is the softmax probability of ``k``.
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if not 1 <= k < beta.shape[0] + 1:
        raise ValueError(f"k must be in 1..{beta.shape[0]}")
    eta_all = np.append(beta @ np.asarray(x, dtype=float), 0.0)
    return float(eta_all[k - 1] - logsumexp(np.delete(eta_all, k - 1)))


def _sech2(t):
    a = np.exp(-2.0 * np.abs(t))
    return 4.0 * a / (1.0 + a) ** 2


@dataclass
class _Terms:
    eta_all: np.ndarray
    lse: np.ndarray
    u: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    sech2: np.ndarray
    P: np.ndarray
    dlu: np.ndarray
    dlv: np.ndarray
    dlw: np.ndarray
    base: np.ndarray  # L(v) - sum_k P_k


def _terms(x, w, beta, gamma, delta) -> _Terms:
    eta = x @ beta.T
    eta_all = np.column_stack([eta, np.zeros(x.shape[0])])
    lse = _leave_one_out_lse(eta_all)
    u = eta - lse
    v = w @ delta
    t = x @ gamma.T
    omega = np.clip(np.tanh(t), -_OMEGA_EDGE, _OMEGA_EDGE)
    P, dlu, dlv, dlw = amh_log_partials(u, v[:, None], omega)
    base = expit(v) - P.sum(axis=1)
    return _Terms(eta_all, lse, u, v, omega, _sech2(t), P, dlu, dlv, dlw, base)


def _row_loglik(tm: _Terms, ind: np.ndarray, baseline: bool) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(ind[:, :-1] > 0, np.log(tm.P), 0.0)
        ll = logp.sum(axis=1)
        if baseline:
            logb = np.where(ind[:, -1] > 0, np.log(np.where(tm.base > 0, tm.base, 0.0)), 0.0)
            ll = ll + logb
    return ll


def _index_scores(tm: _Terms, ind: np.ndarray, baseline: bool):
    """Derivatives of each row's log-likelihood w.r.t. ``eta_j = x'beta_j``, ``t_k = x'gamma_k`` and ``v``."""
    I_k = ind[:, :-1]
    c_u = I_k * tm.dlu
    c_w = I_k * tm.dlw
    c_v = (I_k * tm.dlv).sum(axis=1)
    if baseline:
        I_q = ind[:, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_b = np.where(I_q > 0, 1.0 / tm.base, 0.0)
        c_u = c_u - (I_q * inv_b)[:, None] * tm.P * tm.dlu
        c_w = c_w - (I_q * inv_b)[:, None] * tm.P * tm.dlw
        bv = expit(tm.v) * expit(-tm.v)
        c_v = c_v + I_q * inv_b * (bv - (tm.P * tm.dlv).sum(axis=1))
    # chain through u_k: du_k/deta_k = 1, du_k/deta_j = -exp(eta_j - lse_k) for j != k
    g_eta = c_u.copy()
    m = c_u.shape[1]
    eta = tm.eta_all[:, :m]
    for k in range(m):
        contrib = c_u[:, [k]] * np.exp(eta - tm.lse[:, [k]])
        contrib[:, k] = 0.0
        g_eta -= contrib
    return g_eta, c_w * tm.sech2, c_v


def _obs_scores(x, w, ind, beta, gamma, delta, baseline: bool) -> np.ndarray:
    tm = _terms(x, w, beta, gamma, delta)
    g_eta, g_t, _ = _index_scores(tm, ind, baseline)
    n = x.shape[0]
    sb = (g_eta[:, :, None] * x[:, None, :]).reshape(n, -1)
    sg = (g_t[:, :, None] * x[:, None, :]).reshape(n, -1)
    return np.hstack([sb, sg])


def _unpack(theta, q, d_x):
    m = (q - 1) * d_x
    theta = np.asarray(theta, dtype=float)
    return theta[:m].reshape(q - 1, d_x), theta[m:].reshape(q - 1, d_x)


def _contributing(data: Dataset, baseline: bool) -> np.ndarray:
    ind = data.onehot()
    if not baseline:
        ind[:, -1] = 0.0
    return ind


# ---------------------------------------------------------------------------
# public likelihood / score
# ---------------------------------------------------------------------------


def selected_loglik(data: Dataset, theta, delta, include_baseline_term: bool = False) -> float:
    """Second-step log-likelihood at ``theta`` with ``delta`` fixed.

    Only selected rows in non-baseline categories contribute, unless
    ``include_baseline_term`` adds ``log(L(W'delta) - sum_k P_k)`` for selected
    baseline rows.  Raises :class:`NonFiniteLik` naming the first row whose
    contribution is ``log 0``.
    """
    beta, gamma = _unpack(theta, data.q, data.d_x)
    ind = _contributing(data, include_baseline_term)
    if not ind.any():
        warnings.warn("no rows contribute to the selected-sample likelihood", NonIdentifiedWarning, stacklevel=2)
        return 0.0
    tm = _terms(data.x, data.w, beta, gamma, np.asarray(delta, dtype=float))
    ll = _row_loglik(tm, ind, include_baseline_term)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise NonFiniteLik(f"row {bad[0]} has zero likelihood", row=int(bad[0]))
    return float(ll.sum())


def obs_scores(data: Dataset, theta, delta, include_baseline_term: bool = False) -> np.ndarray:
    """Per-row gradient of the second-step log-likelihood, shape ``(n, len(theta))``."""
    beta, gamma = _unpack(theta, data.q, data.d_x)
    ind = _contributing(data, include_baseline_term)
    return _obs_scores(data.x, data.w, ind, beta, gamma, np.asarray(delta, dtype=float), include_baseline_term)


def score_theta(data: Dataset, theta, delta, include_baseline_term: bool = False) -> np.ndarray:
    """Full analytic gradient of :func:`selected_loglik` w.r.t. ``theta``.

    Includes the dependence of ``u_k`` on every ``beta_j`` through the
    log-sum-exp normalizer.
    """
    return obs_scores(data, theta, delta, include_baseline_term).sum(axis=0)


def paper_scores(data: Dataset, theta, delta) -> np.ndarray:
    """Per-row scores keeping only the own-category derivatives.

    ``s_beta_k = I_k P_k (e^-u + (1 - w) e^-u-v) X`` and
    ``s_gamma_k = I_k P_k e^-u-v (1 - w^2) X``.  These drop the cross-category
    ``beta_j`` terms, so they are not the gradient of the likelihood; they
    exist for the literal variance variant only.
    """
    beta, gamma = _unpack(theta, data.q, data.d_x)
    ind = _contributing(data, False)
    tm = _terms(data.x, data.w, beta, gamma, np.asarray(delta, dtype=float))
    I_k = ind[:, :-1]
    n, x = data.n, data.x
    sb = ((I_k * tm.dlu)[:, :, None] * x[:, None, :]).reshape(n, -1)
    sg = ((I_k * tm.dlw * tm.sech2)[:, :, None] * x[:, None, :]).reshape(n, -1)
    return np.hstack([sb, sg])


def delta_scores(data: Dataset, theta, delta, include_baseline_term: bool = False) -> np.ndarray:
    """Per-row derivative of the second-step log-likelihood w.r.t. ``delta``."""
    beta, gamma = _unpack(theta, data.q, data.d_x)
    ind = _contributing(data, include_baseline_term)
    w = data.w
    tm = _terms(data.x, w, beta, gamma, np.asarray(delta, dtype=float))
    _, _, c_v = _index_scores(tm, ind, include_baseline_term)
    return c_v[:, None] * w


# ---------------------------------------------------------------------------
# step 1
# ---------------------------------------------------------------------------


@dataclass
class LogitFit:
    delta: np.ndarray
    se: np.ndarray
    info: np.ndarray  # mean p(1 - p) w w'
    iterations: int
    grad_norm: float


def first_stage_logit(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> LogitFit:
    """Logit of ``S`` on ``W``; the unique maximizer of the Bernoulli log-likelihood."""
    w = data.w
    s = data.s.astype(float)
    n, d = w.shape
    if n < d or np.linalg.matrix_rank(w) < d:
        raise RankDeficient(f"selection design of {d} columns is rank deficient")

    def f(b):
        e = w @ b
        return float(np.sum(s * log_expit(e) + (1.0 - s) * log_expit(-e)))

    def g(b):
        return w.T @ (s - expit(w @ b))

    def h(b):
        p = expit(w @ b)
        return -(w * (p * (1.0 - p))[:, None]).T @ w

    try:
        delta, diag = newton_maximize(f, g, np.zeros(d), NewtonOptions(tol=tol, max_iter=max_iter), hess=h)
    except NoConvergence as exc:
        best = exc.best
        if best is not None and np.linalg.norm(best) > 1e3:
            raise SeparationDetected("selection logit diverges (separation)", norm=float(np.linalg.norm(best)))
        raise
    p = expit(w @ delta)
    if np.linalg.norm(delta) > 1e3 or np.max(np.abs(s - p)) < 1e-6:
        raise SeparationDetected("selection is perfectly predicted by W", norm=float(np.linalg.norm(delta)))
    info = (w * (p * (1.0 - p))[:, None]).T @ w / n
    try:
        se = np.sqrt(np.diag(inv_spd(info)) / n)
    except NotPositiveDefinite:
        se = np.full(d, np.nan)
    return LogitFit(delta, se, info, diag.iterations, diag.grad_norm)


def multinomial_logit(x, y, q: int, tol: float = 1e-8, max_iter: int = 100):
    """Plain multinomial logit ``P(y = k | x) = softmax(x'beta)_k`` with ``beta_q = 0``.

    Returns ``(beta, se)`` with shapes ``(q - 1, d_x)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    m = q - 1
    yk = np.zeros((n, q))
    yk[np.arange(n), y - 1] = 1.0

    def probs(b):
        eta = np.column_stack([x @ b.reshape(m, d).T, np.zeros(n)])
        return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))

    def f(b):
        eta = np.column_stack([x @ b.reshape(m, d).T, np.zeros(n)])
        return float(np.sum(yk * (eta - logsumexp(eta, axis=1, keepdims=True))))

    def g(b):
        r = yk[:, :m] - probs(b)[:, :m]
        return (r.T @ x).ravel()

    def h(b):
        p = probs(b)[:, :m]
        out = np.empty((m * d, m * d))
        for a in range(m):
            for c in range(m):
                wgt = p[:, a] * ((a == c) - p[:, c])
                out[a * d:(a + 1) * d, c * d:(c + 1) * d] = -(x * wgt[:, None]).T @ x
        return out

    b, _ = newton_maximize(f, g, np.zeros(m * d), NewtonOptions(tol=tol, max_iter=max_iter, step_cap=5.0), hess=h)
    try:
        se = np.sqrt(np.diag(inv_spd(-h(b))))
    except NotPositiveDefinite:
        se = np.full(m * d, np.nan)
    return b.reshape(m, d), se.reshape(m, d)


# ---------------------------------------------------------------------------
# step 2
# ---------------------------------------------------------------------------


def _check_identifiable(data: Dataset):
    sel = data.s == 1
    for k in range(1, data.q):
        if not np.any(sel & (data.y == k)):
            raise NonIdentified(f"no selected observations in category {k}", category=k)


def initial_theta(data: Dataset) -> np.ndarray:
    """Starting point: multinomial logit on the selected rows for ``beta``, zero ``gamma``."""
    sel = data.s == 1
    try:
        beta, _ = multinomial_logit(data.x[sel], data.y[sel], data.q)
    except (NoConvergence, NotPositiveDefinite, np.linalg.LinAlgError) as exc:
        log.warning("initial multinomial logit failed (%s); starting from zero", exc)
        beta = np.zeros((data.q - 1, data.d_x))
    return np.concatenate([beta.ravel(), np.zeros(beta.size)])


def _objective(data: Dataset, delta, baseline: bool):
    ind = _contributing(data, baseline)
    x, w, q, d_x = data.x, data.w, data.q, data.d_x
    delta = np.asarray(delta, dtype=float)

    def f(theta):
        beta, gamma = _unpack(theta, q, d_x)
        ll = _row_loglik(_terms(x, w, beta, gamma, delta), ind, baseline)
        total = ll.sum()
        return float(total) if np.isfinite(total) else -np.inf

    def g(theta):
        beta, gamma = _unpack(theta, q, d_x)
        return _obs_scores(x, w, ind, beta, gamma, delta, baseline).sum(axis=0)

    return f, g


@dataclass
class SecondStage:
    theta: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    loglik: float
    hessian_cond: float


def second_stage_fit(data: Dataset, delta, init=None, config: EstimatorConfig | None = None) -> SecondStage:
    """Maximize the selected-sample likelihood over ``theta`` at fixed ``delta``.

    Raises :class:`NoConvergence` (with the best iterate) after
    ``config.max_iter`` Newton iterations.
    """
    cfg = config or EstimatorConfig()
    _check_identifiable(data)
    theta0 = initial_theta(data) if init is None else np.asarray(init, dtype=float)
    f, g = _objective(data, delta, cfg.include_baseline_term)
    opts = NewtonOptions(tol=cfg.tol, max_iter=cfg.max_iter, step_cap=cfg.step_cap, fd_step=cfg.fd_step)
    theta, diag = newton_maximize(f, g, theta0, opts)
    return SecondStage(theta, diag.converged, diag.iterations, diag.grad_norm, diag.fun, diag.hessian_cond)


# ---------------------------------------------------------------------------
# variance
# ---------------------------------------------------------------------------


def _solve_psd_inverse(m, what: str):
    cond = condition_number(m)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformation(f"{what} is singular (condition number {cond:.3g})", condition=cond)
    try:
        return inv_spd(m), cond
    except NotPositiveDefinite as exc:
        raise SingularInformation(f"{what} is not positive definite (pivot {exc.pivot})", condition=cond)


def sandwich_variance(data: Dataset, theta_hat, delta_hat, config: EstimatorConfig | None = None) -> dict:
    """Asymptotic variance of ``sqrt(n) (theta_hat - theta_0)``.

    Computes two variants from sample-average plug-ins:

    ``paper``
        ``A^-1 (E[s_t s_t'] + E[s_t s_d'] D^-1 E[s_d s_t']) A^-1``
    ``influence``
        ``A^-1 E[psi psi'] A^-1`` with ``psi = s_t + G D^-1 s_d`` and
        ``G = E[d^2 l_2 / d theta d delta']``, the generated-regressor
        influence function.

    plus ``known_delta`` (``A^-1 E[s_t s_t'] A^-1``) and the correction term.
    ``A`` is minus the finite-difference Hessian of the analytic score.
    """
    cfg = config or EstimatorConfig()
    baseline = cfg.include_baseline_term
    theta_hat = np.asarray(theta_hat, dtype=float)
    delta_hat = np.asarray(delta_hat, dtype=float)
    n = data.n
    w = data.w
    s_t = paper_scores(data, theta_hat, delta_hat) if cfg.literal_scores else obs_scores(data, theta_hat, delta_hat, baseline)
    p = expit(w @ delta_hat)
    s_d = (data.s - p)[:, None] * w
    D = symmetrize((w * (p * (1.0 - p))[:, None]).T @ w / n)

    def mean_score(th):
        return score_theta(data, th, delta_hat, baseline) / n

    A = -symmetrize(fd_jacobian(mean_score, theta_hat, cfg.fd_step))
    G = fd_jacobian(lambda d: score_theta(data, theta_hat, d, baseline) / n, delta_hat, cfg.fd_step)

    A_inv, cond_a = _solve_psd_inverse(A, "A (second-step information)")
    D_inv, cond_d = _solve_psd_inverse(D, "D (first-step information)")

    S22 = s_t.T @ s_t / n
    S21 = s_t.T @ s_d / n
    correction = symmetrize(S21 @ D_inv @ S21.T)
    v_known = symmetrize(A_inv @ S22 @ A_inv)
    v_paper = symmetrize(A_inv @ (S22 + correction) @ A_inv)
    psi = s_t + s_d @ (D_inv @ G.T)
    v_if = symmetrize(A_inv @ (psi.T @ psi / n) @ A_inv)

    def se(v):
        return np.sqrt(np.clip(np.diag(v), 0.0, None) / n)

    return {
        "A": A,
        "D": D,
        "G": G,
        "cond_A": cond_a,
        "cond_D": cond_d,
        "correction": correction,
        "variants": {
            "paper": {"vtheta": v_paper, "std_errors": se(v_paper)},
            "influence": {"vtheta": v_if, "std_errors": se(v_if)},
            "known_delta": {"vtheta": v_known, "std_errors": se(v_known)},
        },
    }


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def estimate_two_step(data: Dataset, config: EstimatorConfig | None = None, init=None) -> FitResult:
    """Run both steps and the variance computation.

    Optimizer failure and singular information do not raise: they are
    reported through ``converged`` and ``diagnostics``.  Data errors
    (non-identification, rank deficiency, separation) do raise.
    """
    cfg = config or EstimatorConfig()
    data.validate()
    _check_identifiable(data)
    first = first_stage_logit(data)
    diagnostics: dict = {"flags": [], "first_stage_iterations": first.iterations}

    if data.z is None:
        diagnostics["flags"].append("WeakInstrument")
        diagnostics["instrument_t"] = None
    else:
        t_z = float(first.delta[-1] / first.se[-1]) if first.se[-1] > 0 else 0.0
        diagnostics["instrument_t"] = t_z
        if not abs(t_z) >= 2.0:
            diagnostics["flags"].append("WeakInstrument")

    try:
        stage = second_stage_fit(data, first.delta, init=init, config=cfg)
        theta, converged, iters = stage.theta, stage.converged, stage.iterations
        diagnostics["hessian_cond"] = stage.hessian_cond
    except NoConvergence as exc:
        theta = exc.best if exc.best is not None else initial_theta(data)
        converged = False
        iters = int(exc.diagnostics.get("iterations", cfg.max_iter))
        diagnostics["optimizer_error"] = str(exc)
        diagnostics["flags"].append("NoConvergence")

    beta, gamma = _unpack(theta, data.q, data.d_x)
    params = ModelParams(delta=first.delta, beta=beta, gamma=gamma)
    grad = score_theta(data, theta, first.delta, cfg.include_baseline_term)
    f, _ = _objective(data, first.delta, cfg.include_baseline_term)
    loglik = f(theta)
    saturated = int(np.any(np.abs(data.x @ gamma.T) > cfg.saturation_threshold, axis=1).sum())
    diagnostics.update(
        gradient_norm=float(np.linalg.norm(grad)),
        saturated_rows=saturated,
    )
    if saturated:
        diagnostics["flags"].append("TanhSaturation")

    k = theta.size
    variants: dict = {}
    vtheta = np.full((k, k), np.nan)
    std_errors = np.full(k, np.nan)
    try:
        var = sandwich_variance(data, theta, first.delta, cfg)
        variants = var["variants"]
        vtheta = variants["paper"]["vtheta"]
        std_errors = variants["paper"]["std_errors"]
        diagnostics.update(cond_A=var["cond_A"], cond_D=var["cond_D"])
        if var["cond_A"] > ILL_CONDITIONED:
            diagnostics["flags"].append("IllConditioned")
    except SingularInformation as exc:
        diagnostics["variance_error"] = str(exc)
        diagnostics["flags"].append("SingularInformation")

    return FitResult(
        params=params,
        vtheta=vtheta,
        std_errors=std_errors,
        converged=bool(converged),
        iterations=int(iters),
        loglik=float(loglik),
        n=data.n,
        names=theta_names(data.q, data.x_names),
        delta_se=first.se,
        variants=variants,
        diagnostics=diagnostics,
    )
