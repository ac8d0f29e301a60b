"""Data-generating process and Monte Carlo harness for the selection model.

Random streams: a run is keyed by one root ``seed``.  The dataset of
replication ``r`` is drawn from ``SeedSequence(seed, spawn_key=(r,))``; a
stand-alone dataset uses ``spawn_key=()``; feasibility probes use the
reserved key ``(PROBE_KEY,)``.  Streams therefore do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .bilogistic import amh_joint
from .errors import CatSelectError, InfeasibleDGP, TooManyFailures
from .estimate import Dataset, EstimatorConfig, ModelParams, estimate_two_step, theta_names

log = logging.getLogger(__name__)

PROBE_KEY = 2**32 - 1
NEG_TOL = 1e-12
COVARIATE_KINDS = ("constant", "normal", "binary", "uniform")


@dataclass
class DGPConfig:
    """Simulation design.

    ``covariate_spec`` has one entry per column of ``x``: ``{"kind":
    "constant"}``, ``{"kind": "normal"}``, ``{"kind": "binary"}`` (values
    -1/+1 with equal probability) or ``{"kind": "uniform", "a": lo, "b": hi}``.
    """

    q: int
    d_x: int
    true_params: ModelParams
    covariate_spec: list
    instrument_rate: float = 0.5
    n: int = 2000
    seed: int = 0

    def validate(self) -> "DGPConfig":
        p = self.true_params
        if p.q != self.q or p.d_x != self.d_x:
            raise ValueError("true_params dimensions do not match q and d_x")
        if p.delta.shape != (self.d_x + 1,):
            raise ValueError(f"delta must have d_x + 1 = {self.d_x + 1} entries (x then z)")
        if len(self.covariate_spec) != self.d_x:
            raise ValueError("covariate_spec needs one entry per x column")
        for spec in self.covariate_spec:
            if spec.get("kind") not in COVARIATE_KINDS:
                raise ValueError(f"unknown covariate kind {spec.get('kind')!r}")
        if not 0.0 < self.instrument_rate < 1.0:
            raise ValueError("instrument_rate must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        return self

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "d_x": self.d_x,
            "true_params": self.true_params.to_dict(),
            "covariate_spec": self.covariate_spec,
            "instrument_rate": self.instrument_rate,
            "n": self.n,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        return cls(
            q=int(d["q"]),
            d_x=int(d["d_x"]),
            true_params=ModelParams.from_dict(d["true_params"]),
            covariate_spec=[dict(c) for c in d["covariate_spec"]],
            instrument_rate=float(d.get("instrument_rate", 0.5)),
            n=int(d.get("n", 2000)),
            seed=int(d.get("seed", 0)),
        )


def canonical_config(n: int = 2000, seed: int = 0) -> DGPConfig:
    """Shared fixture: q = 3, x = (1, N(0, 1)), binary instrument with rate 0.5."""
    params = ModelParams(
        delta=[-0.2, 0.5, 1.0],
        beta=[[0.7, 0.3], [0.2, -0.4]],
        gamma=[[0.4, 0.2], [-0.3, 0.1]],
    )
    return DGPConfig(q=3, d_x=2, true_params=params,
                     covariate_spec=[{"kind": "constant"}, {"kind": "normal"}],
                     instrument_rate=0.5, n=n, seed=seed)


def draw_covariates(cfg: DGPConfig, n: int, rng: np.random.Generator):
    cols = []
    for spec in cfg.covariate_spec:
        kind = spec["kind"]
        if kind == "constant":
            cols.append(np.full(n, float(spec.get("value", 1.0))))
        elif kind == "normal":
            cols.append(rng.standard_normal(n))
        elif kind == "binary":
            cols.append(np.where(rng.random(n) < 0.5, -1.0, 1.0))
        else:
            cols.append(rng.uniform(float(spec["a"]), float(spec["b"]), n))
    x = np.column_stack(cols)
    z = (rng.random(n) < cfg.instrument_rate).astype(float)
    return x, z


def _raw_tables(w, x, params: ModelParams) -> np.ndarray:
    """Unchecked ``(n, q, 2)`` cells ``P(Y = c_k, S = s | W)``; ``[..., 1]`` is ``S = 1``."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    eta = np.column_stack([x @ params.beta.T, np.zeros(n)])
    log_pi = eta - logsumexp(eta, axis=1, keepdims=True)
    pi = np.exp(log_pi)
    m = params.q - 1
    lse = np.empty((n, m))
    for k in range(m):
        lse[:, k] = logsumexp(np.delete(eta, k, axis=1), axis=1)
    u = eta[:, :m] - lse
    v = w @ params.delta
    omega = np.tanh(x @ params.gamma.T)
    sel = np.empty((n, params.q))
    sel[:, :m] = amh_joint(u, v[:, None], omega)
    sel[:, m] = expit(v) - sel[:, :m].sum(axis=1)
    cells = np.empty((n, params.q, 2))
    cells[:, :, 1] = sel
    cells[:, :, 0] = pi - sel
    return cells


def joint_tables(w, x, params: ModelParams, row_offset: int = 0) -> np.ndarray:
    """Checked joint tables for many rows; see :func:`row_joint_table`."""
    cells = _raw_tables(w, x, params)
    bad = np.argwhere(cells < -NEG_TOL)
    if bad.size:
        i, k, s = (int(v) for v in bad[0])
        raise InfeasibleDGP(
            f"row {i + row_offset}: cell (k={k + 1}, s={s}) = {cells[i, k, s]:.3g} < 0",
            row=i + row_offset, category=k + 1, s=s, value=float(cells[i, k, s]),
        )
    return np.where(cells < 0.0, 0.0, cells)


def row_joint_table(w, x, params: ModelParams) -> np.ndarray:
    """Joint table ``P(Y = c_k, S = s | W = w)`` of one row as a ``(q, 2)`` array.

    Selected non-baseline cells come from the AMH joint CDF; the selected
    baseline cell and the unselected cells follow from the selection and
    outcome marginals.  Raises :class:`InfeasibleDGP` when a cell is below
    ``-1e-12``; smaller negative values are clamped to zero.
    """
    return joint_tables(np.atleast_2d(w), np.atleast_2d(x), params)[0]


@dataclass
class FeasibilityReport:
    probes: int
    feasible: int
    worst_margin: float
    failures: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.feasible / self.probes if self.probes else float("nan")

    @property
    def accepted(self) -> bool:
        return self.feasible == self.probes

    def to_dict(self) -> dict:
        return {"probes": self.probes, "feasible": self.feasible, "rate": self.rate,
                "accepted": self.accepted, "worst_margin": self.worst_margin,
                "failures": self.failures}


def _probe_rng(cfg: DGPConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(PROBE_KEY,)))


def validate_config(cfg: DGPConfig, probes: int = 10_000, max_failures: int = 10) -> FeasibilityReport:
    """Probe the covariate law and report how often the implied tables are valid.

    Independent of ``cfg.n``.  A config is accepted only when every probe is
    feasible.
    """
    cfg.validate()
    x, z = draw_covariates(cfg, probes, _probe_rng(cfg))
    w = np.column_stack([x, z])
    cells = _raw_tables(w, x, cfg.true_params)
    row_min = cells.reshape(probes, -1).min(axis=1)
    ok = row_min >= -NEG_TOL
    failures = []
    for i in np.flatnonzero(~ok)[:max_failures]:
        k, s = np.unravel_index(int(np.argmin(cells[i])), cells[i].shape)
        failures.append({"probe": int(i), "x": x[i].tolist(), "z": float(z[i]),
                         "category": int(k) + 1, "s": int(s), "value": float(cells[i, k, s])})
    return FeasibilityReport(probes, int(ok.sum()), float(row_min.min()), failures)


def sample_dataset(cfg: DGPConfig, replication: int | None = None) -> Dataset:
    """Draw a dataset by inverse-CDF sampling from each row's joint table.

    Deterministic in ``(cfg, replication)``.
    """
    cfg.validate()
    key = () if replication is None else (int(replication),)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=key))
    n, q = cfg.n, cfg.q
    x, z = draw_covariates(cfg, n, rng)
    w = np.column_stack([x, z])
    cells = joint_tables(w, x, cfg.true_params)
    # flat order: (k=1..q, s=1) then (k=1..q, s=0)
    flat = np.concatenate([cells[:, :, 1], cells[:, :, 0]], axis=1)
    cdf = np.cumsum(flat, axis=1)
    draw = rng.random(n) * cdf[:, -1]
    idx = np.minimum((draw[:, None] >= cdf).sum(axis=1), 2 * q - 1)
    s = (idx < q).astype(np.int64)
    y = np.where(s == 1, idx + 1, 0)
    names = [f"x{j + 1}" for j in range(cfg.d_x)]
    return Dataset(s=s, y=y, x=x, z=z, q=q, x_names=names)


def population_table(cfg: DGPConfig, probes: int = 200_000) -> dict:
    """Population ``P(Y = c_k, S = 1 | Z = z)`` and ``P(S = 1 | Z = z)``.

    Exact when every covariate is constant; otherwise averaged over
    ``probes`` covariate draws from the probe stream.
    """
    cfg.validate()
    if all(spec["kind"] == "constant" for spec in cfg.covariate_spec):
        x = np.array([[float(spec.get("value", 1.0)) for spec in cfg.covariate_spec]] * 2)
    else:
        x, _ = draw_covariates(cfg, probes, _probe_rng(cfg))
    out = {"p_joint": np.empty((cfg.q - 1, 2)), "p_sel": np.empty(2)}
    for zz in range(2):
        w = np.column_stack([x, np.full(x.shape[0], float(zz))])
        cells = joint_tables(w, x, cfg.true_params)
        out["p_joint"][:, zz] = cells[:, :-1, 1].mean(axis=0)
        out["p_sel"][zz] = cells[:, :, 1].sum(axis=1).mean()
    return out


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class MCReport:
    names: list
    truth: np.ndarray
    n: int
    replications: int
    failures: int
    estimates: np.ndarray  # (n_ok, k)
    std_errors: dict  # variant -> (n_ok, k)
    failure_reasons: list = field(default_factory=list)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.replications

    def summary(self, level: float = 0.95) -> dict:
        from scipy.stats import norm

        crit = float(norm.ppf(0.5 + level / 2.0))
        est = self.estimates
        n_ok = est.shape[0]
        err = est - self.truth
        out = {
            "bias": err.mean(axis=0).tolist() if n_ok else None,
            "rmse": np.sqrt((err**2).mean(axis=0)).tolist() if n_ok else None,
            "empirical_sd": est.std(axis=0, ddof=1).tolist() if n_ok > 1 else None,
            "median_abs_error_inf": float(np.median(np.abs(err).max(axis=1))) if n_ok else None,
            "variants": {},
        }
        for name, se in self.std_errors.items():
            cover = np.abs(err) <= crit * se
            out["variants"][name] = {
                "mean_se": np.nanmean(se, axis=0).tolist() if n_ok else None,
                "coverage": cover.mean(axis=0).tolist() if n_ok else None,
            }
        return out

    def to_dict(self, level: float = 0.95) -> dict:
        return {
            "names": list(self.names),
            "truth": self.truth.tolist(),
            "n": self.n,
            "replications": self.replications,
            "succeeded": int(self.estimates.shape[0]),
            "failures": self.failures,
            "failure_rate": self.failure_rate,
            "failure_reasons": self.failure_reasons,
            "level": level,
            **self.summary(level),
        }


VARIANTS = ("paper", "influence")


def _one_replication(args):
    cfg_dict, rep, est_dict = args
    cfg = DGPConfig.from_dict(cfg_dict)
    est_cfg = EstimatorConfig(**est_dict)
    try:
        data = sample_dataset(cfg, replication=rep)
        fit = estimate_two_step(data, est_cfg)
    except CatSelectError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"
    if not fit.converged:
        return rep, None, f"NoConvergence: {fit.diagnostics.get('optimizer_error', '')}"
    if not fit.variants:
        return rep, None, f"SingularInformation: {fit.diagnostics.get('variance_error', '')}"
    ses = {v: fit.variants[v]["std_errors"] for v in VARIANTS}
    return rep, (fit.params.theta, ses), None


def monte_carlo(cfg: DGPConfig, replications: int, estimator_config: EstimatorConfig | None = None,
                workers: int = 1, max_failure_rate: float = 0.2) -> MCReport:
    """Repeated simulate-and-estimate runs at the true parameters.

    Replication ``r`` always uses the same random stream, so results do not
    depend on ``workers``.  Failed fits are excluded and counted; more than
    ``max_failure_rate`` of failures raises :class:`TooManyFailures`.
    """
    cfg.validate()
    est_cfg = estimator_config or EstimatorConfig()
    jobs = [(cfg.to_dict(), r, est_cfg.to_dict()) for r in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replication, jobs, chunksize=max(1, replications // (4 * workers))))
    else:
        results = [_one_replication(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    ok = [r for r in results if r[1] is not None]
    reasons = [{"replication": r[0], "reason": r[2]} for r in results if r[1] is None]
    k = cfg.true_params.theta.size
    estimates = np.array([r[1][0] for r in ok]).reshape(-1, k)
    ses = {v: np.array([r[1][1][v] for r in ok]).reshape(-1, k) for v in VARIANTS}
    report = MCReport(
        names=theta_names(cfg.q, [f"x{j + 1}" for j in range(cfg.d_x)]),
        truth=cfg.true_params.theta,
        n=cfg.n,
        replications=replications,
        failures=len(reasons),
        estimates=estimates,
        std_errors=ses,
        failure_reasons=reasons,
    )
    if report.failure_rate > max_failure_rate:
        raise TooManyFailures(
            f"{report.failures} of {replications} replications failed",
            failure_rate=report.failure_rate, reasons=reasons[:10],
        )
    return report


def rmse_ratio(small: MCReport, large: MCReport) -> float:
    """Ratio of pooled RMSE (over all coordinates) between two sample sizes."""
    def pooled(r):
        return math.sqrt(float(((r.estimates - r.truth) ** 2).mean()))
    return pooled(large) / pooled(small)
