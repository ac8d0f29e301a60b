"""Acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and prints
a single ``CRITERION k: PASS|FAIL`` line with the measured quantities.  Run
with ``pytest tests/test_acceptance.py -v``; the lines appear in the
terminal output even when pytest captures stdout.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.special import expit

from catselect.bilogistic import amh_joint, amh_partials, logistic_cdf
from catselect.dgp import canonical_config, joint_tables, monte_carlo, sample_dataset
from catselect.errors import InfeasibleDGP, TooManyFailures
from catselect.estimate import EstimatorConfig, ModelParams, estimate_two_step, multinomial_logit, score_theta, selected_loglik
from catselect.identify import LatentCategorical, forward_map, identify_all, overidentification_check, pairwise_tables
from catselect.llr import solve_association
from catselect.numerics import fd_gradient

SEED = 20261019
BASELINE = EstimatorConfig(include_baseline_term=True)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}")
    return emit


def test_criterion_01_llr_round_trip(report):
    # Draw log-odds in [-6, 6] (probabilities 0.0025 to 0.9975).  Farther out,
    # omega is only determined by the rounded joint probability up to about
    # eps / ((1 - a)(1 - b)), which exceeds 1e-10 once both log-odds pass ~7;
    # that tail is checked against the conditioning bound instead.
    rng = np.random.default_rng(SEED)
    n = 100_000
    u = rng.uniform(-6, 6, n)
    v = rng.uniform(-6, 6, n)
    w = rng.uniform(-0.99, 0.99, n)
    p_a, p_b, p = logistic_cdf(u), logistic_cdf(v), amh_joint(u, v, w)
    start = time.perf_counter()
    rec = np.array([solve_association(a, b, c) for a, b, c in zip(p_a, p_b, p)])
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(rec - w)))

    u8, v8 = rng.uniform(-8, 8, n // 10), rng.uniform(-8, 8, n // 10)
    w8 = rng.uniform(-0.99, 0.99, n // 10)
    rec8 = np.array([solve_association(a, b, c) for a, b, c in
                     zip(logistic_cdf(u8), logistic_cdf(v8), amh_joint(u8, v8, w8))])
    bound = np.maximum(1e-10, 4 * np.finfo(float).eps / (logistic_cdf(-u8) * logistic_cdf(-v8)))
    wide_ok = bool(np.all(np.abs(rec8 - w8) <= bound))
    ok = err <= 1e-10 and elapsed < 5.0 and wide_ok
    report(1, ok, f"max |omega error| = {err:.2e} (tol 1e-10) over {n} draws with |u|,|v| <= 6, "
                  f"{elapsed:.2f} s (limit 5 s); |u|,|v| <= 8 within conditioning bound: {wide_ok} "
                  f"(raw max {np.max(np.abs(rec8 - w8)):.2e})")
    assert ok


def test_criterion_02_sign_property(report):
    rng = np.random.default_rng(SEED + 2)
    n = 10_000
    p_a, p_b = rng.uniform(0.01, 0.99, n), rng.uniform(0.01, 0.99, n)
    u, v = np.log(p_a / (1 - p_a)), np.log(p_b / (1 - p_b))
    lo, hi = amh_joint(u, v, -1.0), amh_joint(u, v, 1.0)
    p = lo + rng.uniform(0, 1, n) * (hi - lo)
    inside = (p > lo) & (p < hi)
    exceptions = considered = 0
    for a, b, c in zip(p_a[inside], p_b[inside], p[inside]):
        cov = c - a * b
        if abs(cov) <= 1e-12:
            continue
        considered += 1
        exceptions += int(np.sign(solve_association(a, b, c)) != np.sign(cov))
    ok = exceptions == 0
    report(2, ok, f"{exceptions} sign exceptions among {considered} triples with |cov| > 1e-12")
    assert ok


def test_criterion_03_identification_round_trip(report):
    rng = np.random.default_rng(SEED + 3)
    start = time.perf_counter()
    worst = 0.0
    done = {2: 0, 3: 0, 5: 0, 10: 0}
    target = 2500
    while min(done.values()) < target:
        q = min(k for k, c in done.items() if c < target)
        pi = rng.dirichlet(np.ones(q))
        if pi.min() < 0.02:
            continue
        omega = rng.uniform(-0.95, 0.95, q - 1)
        s = rng.uniform(0.05, 0.95, 2)
        nu = np.sort(np.log(s / (1 - s)))
        if nu[1] - nu[0] < 0.1:
            continue
        latent = LatentCategorical.from_pi(pi, omega)
        try:
            table = forward_map(latent, nu[0], nu[1])
        except InfeasibleDGP:
            continue
        rec = identify_all(table)
        worst = max(worst, float(np.max(np.abs(rec.mu - latent.mu))), float(np.max(np.abs(rec.omega - latent.omega))))
        done[q] += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10.0
    report(3, ok, f"max |(mu, omega) error| = {worst:.2e} (tol 1e-9) over {sum(done.values())} latents "
                  f"q in {{2,3,5,10}}, {elapsed:.2f} s (limit 10 s)")
    assert ok


def test_criterion_04_partials_and_scores(report):
    rng = np.random.default_rng(SEED + 4)
    worst_partial = 0.0
    for _ in range(20):
        x = np.array([rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-0.95, 0.95)])
        an = np.array(amh_partials(*x))
        fd = fd_gradient(lambda t: amh_joint(*t), x, step=1e-6)
        worst_partial = max(worst_partial, float(np.max(np.abs(an - fd) / np.abs(fd))))
    cfg = canonical_config(n=2000, seed=SEED)
    data = sample_dataset(cfg)
    base = cfg.true_params
    worst_score = 0.0
    for baseline in (False, True):
        checked = 0
        while checked < 20:
            theta = base.theta + rng.normal(scale=0.3, size=base.theta.size)
            delta = base.delta + rng.normal(scale=0.1, size=base.delta.size)
            try:
                selected_loglik(data, theta, delta, baseline)
            except Exception:
                continue
            checked += 1
            an = score_theta(data, theta, delta, baseline)
            fd = fd_gradient(lambda t: selected_loglik(data, t, delta, baseline), theta, step=1e-6)
            worst_score = max(worst_score, float(np.linalg.norm(an - fd) / np.linalg.norm(fd)))
    ok = worst_partial <= 1e-6 and worst_score <= 1e-6
    report(4, ok, f"partials max rel error {worst_partial:.2e}, score max rel error {worst_score:.2e} "
                  f"(tol 1e-6; 20 points each, both likelihood variants)")
    assert ok


def test_criterion_05_consistency(report):
    start = time.perf_counter()
    sizes = (2000, 8000, 32000)
    medians, pooled, per_coord, fails = [], [], [], []
    for n in sizes:
        rep = monte_carlo(canonical_config(n=n, seed=SEED), 50, BASELINE, max_failure_rate=1.0)
        err = rep.estimates - rep.truth
        medians.append(float(np.median(np.abs(err).max(axis=1))))
        pooled.append(float(np.sqrt(np.mean(err**2))))
        per_coord.append(np.sqrt(np.mean(err**2, axis=0)))
        fails.append(rep.failures)
    elapsed = time.perf_counter() - start
    ratios = [pooled[i + 1] / pooled[i] for i in range(2)]
    coord_ratios = [per_coord[i + 1] / per_coord[i] for i in range(2)]
    monotone = medians[0] > medians[1] > medians[2]
    in_band = all(0.4 <= r <= 0.6 for r in ratios)
    ok = monotone and in_band and elapsed < 900
    detail = (f"median inf-norm error {[round(m, 4) for m in medians]} (monotone={monotone}); "
              f"pooled RMSE ratios {[round(r, 3) for r in ratios]} (band [0.4, 0.6]); "
              f"per-coordinate ratios {[np.round(r, 2).tolist() for r in coord_ratios]}; "
              f"failures {fails}; {elapsed:.0f} s (limit 900 s)")
    report(5, ok, detail)
    assert ok


def test_criterion_06_coverage(report):
    start = time.perf_counter()
    cfg = canonical_config(n=2000, seed=SEED)
    rep = monte_carlo(cfg, 500, BASELINE, max_failure_rate=1.0)
    summary = rep.to_dict()
    cover = {v: s["coverage"] for v, s in summary["variants"].items()}
    passing = [v for v, c in cover.items() if all(0.90 <= x <= 0.98 for x in c)]
    # diagnostic: the literal objective (no baseline-category term)
    try:
        literal = monte_carlo(cfg, 10, EstimatorConfig(), max_failure_rate=1.0)
        literal_note = f"literal objective: {literal.failures}/10 replications failed"
    except TooManyFailures as exc:  # pragma: no cover - max_failure_rate=1 never raises
        literal_note = str(exc)
    elapsed = time.perf_counter() - start
    ok = bool(passing)
    detail = (f"passing variants {passing or 'none'}; coverage "
              + "; ".join(f"{v}={np.round(c, 3).tolist()}" for v, c in cover.items())
              + f"; {rep.failures}/500 replications failed; {literal_note}; {elapsed:.0f} s")
    report(6, ok, detail)
    assert ok


def test_criterion_07_independence_reduction(report):
    cfg = canonical_config(n=100_000, seed=SEED)
    params = ModelParams(delta=cfg.true_params.delta, beta=cfg.true_params.beta, gamma=np.zeros((2, 2)))
    cfg.true_params = params
    data = sample_dataset(cfg)
    fit = estimate_two_step(data, BASELINE)
    sel = data.s == 1
    beta_mnl, _ = multinomial_logit(data.x[sel], data.y[sel], 3)
    se = fit.std_errors[:4].reshape(2, 2)
    z = np.abs(fit.params.beta - beta_mnl) / se
    ok = bool(np.all(z <= 2.0)) and fit.converged
    report(7, ok, f"|beta_hat - beta_mnl| / SE = {np.round(z.ravel(), 3).tolist()} (limit 2), n = 100000")
    assert ok


def test_criterion_08_conservation(report):
    rng = np.random.default_rng(SEED + 8)
    tables = violations = 0
    worst = 0.0
    while tables < 100_000:
        q = int(rng.integers(2, 6))
        params = ModelParams(delta=rng.normal(scale=0.7, size=3), beta=rng.normal(scale=0.7, size=(q - 1, 2)),
                             gamma=rng.normal(scale=0.3, size=(q - 1, 2)))
        x = np.column_stack([np.ones(10_000), rng.normal(size=10_000)])
        w = np.column_stack([x, rng.integers(0, 2, 10_000)])
        try:
            cells = joint_tables(w, x, params)
        except InfeasibleDGP:
            continue
        e1 = np.abs(cells.sum(axis=(1, 2)) - 1.0)
        e2 = np.abs(cells[:, :, 1].sum(axis=1) - expit(w @ params.delta))
        violations += int(np.sum((e1 > 1e-12) | (e2 > 1e-12) | np.any(cells < 0, axis=(1, 2))))
        worst = max(worst, float(e1.max()), float(e2.max()))
        tables += x.shape[0]
    ok = violations == 0
    report(8, ok, f"{violations} violations over {tables} tables; worst deviation {worst:.2e} (tol 1e-12)")
    assert ok


def test_criterion_09_overidentification(report):
    latent = LatentCategorical.from_pi([0.4, 0.35, 0.25], [0.3, -0.2])
    nus = np.array([-0.6, 0.0, 0.7])
    p_joint = np.column_stack([forward_map(latent, nu, nu + 1.0).p_joint[:, 0] for nu in nus])
    p_sel = expit(nus)
    clean = overidentification_check(pairwise_tables(p_joint, p_sel), tol=1e-9)
    bumped = p_joint.copy()
    bumped[0, 2] += 0.01
    dirty = overidentification_check(pairwise_tables(bumped, p_sel), tol=1e-3)
    disc = max(clean.max_mu_discrepancy, clean.max_omega_discrepancy)
    ok = disc <= 1e-9 and dirty.flagged
    report(9, ok, f"clean discrepancy {disc:.2e} (tol 1e-9); perturbed discrepancy "
                  f"{max(dirty.max_mu_discrepancy, dirty.max_omega_discrepancy):.3g}, flagged={dirty.flagged}")
    assert ok


def _cli(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "catselect", *args], cwd=cwd, capture_output=True, text=True)
    return proc


def test_criterion_10_cli_determinism(report, tmp_path):
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        sim = _cli("simulate", "--seed", "42", "--n", "4000", "--out", "data.csv", cwd=d)
        assert sim.returncode == 0, sim.stderr
        for workers in ("1", "8"):
            for extra in ((), ("--include-baseline-term",)):
                name = f"fit_w{workers}{'_b' if extra else ''}.json"
                est = _cli("estimate", "data.csv", "--workers", workers, *extra, "--out", name, cwd=d)
                assert est.returncode == 0, est.stderr
                outputs[(run, workers, bool(extra))] = (d / name).read_bytes()
        outputs[(run, "csv")] = (d / "data.csv").read_bytes()
    mc = {}
    for workers in ("1", "8"):
        proc = _cli("mc", "--seed", "5", "--n", "800", "--replications", "4", "--include-baseline-term",
                    "--workers", workers, "--out", f"mc{workers}.json", cwd=tmp_path)
        assert proc.returncode in (0, 2), proc.stderr
        mc[workers] = (tmp_path / f"mc{workers}.json").read_bytes()
    same_csv = outputs[("a", "csv")] == outputs[("b", "csv")]
    same_fit = all(len({outputs[(r, w, b)] for r in "ab" for w in ("1", "8")}) == 1 for b in (False, True))
    same_mc = mc["1"] == mc["8"]
    ok = same_csv and same_fit and same_mc
    fit = json.loads(outputs[("a", "1", True)])
    report(10, ok, f"CSV identical={same_csv}; estimate JSON identical across runs and --workers 1/8={same_fit}; "
                   f"mc JSON identical across --workers 1/8={same_mc}; converged={fit['converged']}")
    assert ok
