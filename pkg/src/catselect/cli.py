"""Command-line interface.

Subcommands: ``identify``, ``estimate``, ``simulate``, ``mc``.  Exit codes:
0 success, 1 input error, 2 method error, 3 internal error.

An optional ``--config`` JSON file supplies defaults; explicit flags win.
Recognized sections: ``seed``, ``q``, ``probes``, ``dgp`` (simulation
design), ``estimator`` (estimator options) and ``mc`` (``replications``,
``level``, ``coverage_band``, ``max_failure_rate``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import DGPConfig, canonical_config, monte_carlo, population_table, sample_dataset, validate_config
from .errors import CatSelectError, IdentificationError, InputError
from .estimate import EstimatorConfig, estimate_two_step
from .identify import ObservedSelectionTable, identify_all
from .io import FORMAT_VERSION, dumps, file_digest, read_dataset_csv, read_json, write_dataset_csv, write_json

log = logging.getLogger("catselect")

EXIT_OK, EXIT_INPUT, EXIT_METHOD, EXIT_INTERNAL = 0, 1, 2, 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise InputError("config file must contain a JSON object")
    return cfg


def _estimator_config(file_cfg: dict, args) -> EstimatorConfig:
    opts = dict(file_cfg.get("estimator", {}))
    unknown = set(opts) - set(EstimatorConfig.__dataclass_fields__)
    if unknown:
        raise InputError(f"unknown estimator options: {sorted(unknown)}")
    if getattr(args, "include_baseline_term", False):
        opts["include_baseline_term"] = True
    return EstimatorConfig(**opts)


def _dgp_config(file_cfg: dict, args) -> DGPConfig:
    section = file_cfg.get("dgp")
    if section is None:
        cfg = canonical_config()
    else:
        try:
            merged = {"seed": file_cfg.get("seed", 0), **section}
            cfg = DGPConfig.from_dict(merged)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid dgp section: {exc}") from exc
    if "seed" in file_cfg and "seed" not in (section or {}):
        cfg.seed = int(file_cfg["seed"])
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "n", None) is not None:
        cfg.n = args.n
    try:
        return cfg.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _envelope(command: str, config: dict) -> dict:
    return {"format_version": FORMAT_VERSION, "version": __version__, "command": command, "config": config}


def _coord_table(names, est, se):
    rows = []
    for name, b, s in zip(names, est, se):
        t = b / s if s and np.isfinite(s) and s > 0 else None
        rows.append({"name": name, "estimate": b, "se": s, "t": t})
    return rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_identify(args) -> dict:
    raw = read_json(args.table)
    try:
        table = ObservedSelectionTable.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"table must have q, p_sel and p_joint: {exc}") from exc
    latent = identify_all(table)
    out = _envelope("identify", {"table": table.to_dict()})
    out.update(latent.to_dict())
    return out


def cmd_estimate(args) -> dict:
    file_cfg = _load_config(args.config)
    est_cfg = _estimator_config(file_cfg, args)
    q = file_cfg.get("q")
    add_intercept = bool(args.add_intercept or file_cfg.get("add_intercept", False))
    data = read_dataset_csv(args.data, q=q, add_intercept=add_intercept)
    fit = estimate_two_step(data, est_cfg)
    config = {
        "estimator": est_cfg.to_dict(),
        "q": data.q,
        "add_intercept": add_intercept,
        "input_sha256": file_digest(args.data),
    }
    out = _envelope("estimate", config)
    out.update(
        n=fit.n,
        q=data.q,
        converged=fit.converged,
        iterations=fit.iterations,
        loglik=fit.loglik,
        params=fit.params.to_dict(),
        delta=_coord_table(data.w_names, fit.params.delta, fit.delta_se),
        theta={v: _coord_table(fit.names, fit.params.theta, fit.variants[v]["std_errors"])
               for v in fit.variants},
        vtheta={v: fit.variants[v]["vtheta"] for v in fit.variants},
        diagnostics=fit.diagnostics,
    )
    return out


def cmd_simulate(args) -> dict:
    file_cfg = _load_config(args.config)
    cfg = _dgp_config(file_cfg, args)
    probes = args.probes if args.probes is not None else int(file_cfg.get("probes", 10_000))
    report = validate_config(cfg, probes)
    if not report.accepted:
        raise _MethodFailure(
            f"DGP infeasible: {report.feasible}/{report.probes} probes valid",
            {"error": "InfeasibleDGP", "feasibility": report.to_dict()},
        )
    data = sample_dataset(cfg)
    out_csv = Path(args.out or "simulated.csv")
    write_dataset_csv(data, out_csv)
    truth = _envelope("simulate", {"dgp": cfg.to_dict(), "probes": probes})
    pop = population_table(cfg)
    truth.update(
        params=cfg.true_params.to_dict(),
        theta=cfg.true_params.theta,
        population={"p_joint": pop["p_joint"], "p_sel": pop["p_sel"]},
        feasibility=report.to_dict(),
        data_file=out_csv.name,
        data_sha256=file_digest(out_csv),
    )
    truth_path = out_csv.with_suffix(".truth.json")
    write_json(truth, truth_path)
    truth["_written"] = str(truth_path)
    return truth


def cmd_mc(args) -> dict:
    file_cfg = _load_config(args.config)
    cfg = _dgp_config(file_cfg, args)
    est_cfg = _estimator_config(file_cfg, args)
    mc = dict(file_cfg.get("mc", {}))
    reps = args.replications if args.replications is not None else int(mc.get("replications", 100))
    level = float(mc.get("level", 0.95))
    band = [float(b) for b in mc.get("coverage_band", [0.90, 0.98])]
    max_fail = float(mc.get("max_failure_rate", 0.2))
    report = monte_carlo(cfg, reps, est_cfg, workers=args.workers, max_failure_rate=max_fail)
    summary = report.to_dict(level)
    passing = [v for v, s in summary["variants"].items()
               if s["coverage"] is not None and all(band[0] <= c <= band[1] for c in s["coverage"])]
    config = {"dgp": cfg.to_dict(), "estimator": est_cfg.to_dict(), "replications": reps,
              "level": level, "coverage_band": band, "max_failure_rate": max_fail}
    out = _envelope("mc", config)
    out.update(report=summary, coverage_pass=bool(passing), passing_variants=passing)
    return out


class _MethodFailure(Exception):
    def __init__(self, message, payload):
        super().__init__(message)
        self.payload = payload


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file (flags override it)")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--out", metavar="PATH", help="output path (default: stdout)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for replications")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="catselect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identify", parents=[common], help="closed-form identification from a probability table")
    p.add_argument("table", help="JSON table {q, p_sel, p_joint}")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("estimate", parents=[common], help="two-step estimation from microdata CSV")
    p.add_argument("data", help="CSV with columns s,y,z,x1..xd")
    p.add_argument("--include-baseline-term", action="store_true",
                   help="add the selected baseline-category rows to the second-step likelihood")
    p.add_argument("--add-intercept", action="store_true", help="prepend a constant column to x")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset from a DGP config")
    p.add_argument("--probes", type=int, help="covariate probes for feasibility validation")
    p.add_argument("--n", type=int, help="sample size (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", parents=[common], help="Monte Carlo study of the estimator")
    p.add_argument("--replications", type=int)
    p.add_argument("--n", type=int, help="sample size per replication")
    p.add_argument("--include-baseline-term", action="store_true")
    p.set_defaults(func=cmd_mc)
    return parser


def _emit(obj: dict, out_path) -> None:
    text = dumps(obj)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    # simulate writes its CSV to --out; its JSON sidecar is written by the command
    result_path = None if args.command == "simulate" else args.out
    try:
        result = args.func(args)
    except InputError as exc:
        return _fail(exc.to_dict(), result_path, EXIT_INPUT)
    except _MethodFailure as exc:
        return _fail({"message": str(exc), **exc.payload}, result_path, EXIT_METHOD)
    except (IdentificationError, CatSelectError) as exc:
        payload = exc.to_dict()
        code = EXIT_INPUT if isinstance(exc, InputError) else EXIT_METHOD
        return _fail(payload, result_path, code)
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 3
        payload = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        return _fail(payload, result_path, EXIT_INTERNAL)
    if args.command == "simulate":
        written = result.pop("_written")
        log.info("wrote %s and %s", args.out or "simulated.csv", written)
        sys.stdout.write(dumps({"data": args.out or "simulated.csv", "truth": written,
                                "feasibility": result["feasibility"]}))
    else:
        _emit(result, result_path)
    return EXIT_OK


def _fail(payload: dict, out_path, code: int) -> int:
    payload = {"format_version": FORMAT_VERSION, "exit_code": code, **payload}
    text = dumps(payload)
    sys.stderr.write(text)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
