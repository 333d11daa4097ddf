"""Batch command-line interface.

Subcommands: ``simulate``, ``cluster``, ``select``, ``evaluate``, ``score``.

Exit codes: 0 success, 2 usage or invalid input, 3 I/O failure,
4 numeric degeneracy (singular fits), 5 no restart passed the
log-likelihood threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .data import load_dataset, save_dataset
from .engine import StopRule
from .exceptions import DegenerateCluster, KMLEError, ThresholdNotMet, ValidationError
from .kvars import VarParams, run_kvars, score_series
from .selection import SolverConfig, cyclic_descent, grid_search, parse_grid
from .synth import GenSpec, gen_dataset, vsnr_db

logger = logging.getLogger("kmle")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _write_text(text, path=None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_USAGE) from None


def _read_labels(path):
    obj = _read_json(path)
    labels = obj.get("labels") if isinstance(obj, dict) else obj
    if not isinstance(labels, list):
        raise CliError(f"{path}: no label list found", EXIT_USAGE)
    return np.asarray(labels)


def _stop_rule(args):
    return StopRule(args.stop, args.tol, args.max_iter)


def result_to_dict(result, seed=None) -> dict:
    cert = result.certificate
    return {
        "labels": [int(x) + 1 for x in result.labels],
        "clusters": [prm.to_dict() for prm in result.params],
        "loglik_trace": [float(x) for x in result.trace],
        "iters": result.iters,
        "stop_reason": result.stop_reason.value,
        "certificate": {
            "tau_stable": bool(cert.tau_stable),
            "theta_stable": bool(cert.theta_stable),
        } if cert is not None else None,
        "seed": seed,
    }


def cmd_simulate(args):
    noise = "student_t" if args.noise == "t" else "gaussian"
    spec = GenSpec(m=args.m, p=args.p, t=args.t, k=args.k, n_per_cluster=args.nc,
                   noise=noise, dof=args.dof if noise == "student_t" else None,
                   target_snr_db=args.snr_db, target_spectral_radius=args.radius,
                   seed=args.seed)
    ds, truth, models = gen_dataset(spec)
    out = Path(args.out)
    save_dataset(ds, out)
    _write_json({
        "labels": [int(x) + 1 for x in truth.labels],
        "models": [prm.to_dict() for prm in models],
        "achieved_snr_db": [float(vsnr_db(prm)) for prm in models],
        "spec": spec.to_dict(),
    }, out / "truth.json")
    logger.info("wrote %d series to %s", ds.n_series, out)
    return EXIT_OK


def cmd_cluster(args):
    ds = load_dataset(args.data_dir)
    true_labels = None
    if args.init == "oracle":
        truth = Path(args.data_dir) / "truth.json"
        if not truth.exists():
            raise CliError(f"oracle init needs {truth}", EXIT_USAGE)
        true_labels = _read_labels(truth)
    result = run_kvars(ds, args.k, args.p, args.init, _stop_rule(args), seed=args.seed,
                       restarts=args.restarts, true_labels=true_labels, ridge=args.ridge,
                       loglik_threshold=args.loglik_threshold, n_jobs=args.threads)
    _write_json(result_to_dict(result, args.seed), args.out)
    return EXIT_OK


def cmd_select(args):
    ds = load_dataset(args.data_dir)
    k_grid, p_grid = parse_grid(args.k_grid), parse_grid(args.p_grid)
    config = SolverConfig(restarts=args.restarts, stop=_stop_rule(args), seed=args.seed,
                          ridge=args.ridge, n_jobs=args.threads)
    if args.mode == "grid":
        table = grid_search(ds, k_grid, p_grid, config)
    else:
        if args.start:
            try:
                start = tuple(int(x) for x in args.start.split(","))
            except ValueError:
                raise CliError(f"cannot parse --start {args.start!r}", EXIT_USAGE) from None
            if len(start) != 2:
                raise CliError("--start expects K,p", EXIT_USAGE)
        else:
            start = (k_grid[0], p_grid[0])
        table = cyclic_descent(ds, k_grid, p_grid, start, config)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bic.csv", "w", encoding="utf-8", newline="") as fh:
        table.to_csv(fh)
    best = table.best_cell
    _write_json({
        "K": best.k if best else None,
        "p": best.p if best else None,
        "bic": best.bic if best else None,
        "loglik": best.loglik if best else None,
        "mode": args.mode,
        "visited": len(table.cells),
        "path": [list(c) for c in table.path],
        "seed": args.seed,
    }, out / "best.json")
    return EXIT_OK


def cmd_evaluate(args):
    u, v = _read_labels(args.labels_a), _read_labels(args.labels_b)
    _write_json(metrics.evaluate(u, v), args.out)
    return EXIT_OK


def cmd_score(args):
    ds = load_dataset(args.data_dir)
    model = _read_json(args.model)
    clusters = model.get("clusters") if isinstance(model, dict) else None
    if not clusters:
        raise CliError(f"{args.model}: no clusters found", EXIT_USAGE)
    params = [VarParams.from_dict(c) for c in clusters]
    if any(prm.m != ds.m for prm in params):
        raise CliError(f"model dimension does not match data (m={ds.m})", EXIT_USAGE)
    p_common = max(prm.p for prm in params)
    if p_common > ds.t - 2:
        raise CliError(f"model order {p_common} too large for T={ds.t}", EXIT_USAGE)
    lines = [",".join([f"D_{k + 1}" for k in range(len(params))] + ["label"])]
    for s in ds.series:
        d = [score_series(s, prm, p_common) for prm in params]
        lines.append(",".join([repr(float(x)) for x in d] + [str(int(np.argmin(d)) + 1)]))
    _write_text("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _positive_float(text):
    val = float(text)
    if not (np.isfinite(val) and val > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--tol", type=_positive_float, default=1e-6)
    run.add_argument("--max-iter", type=_positive_int, default=200)
    run.add_argument("--stop", choices=["param", "loglik"], default="loglik")
    run.add_argument("--ridge", action="store_true", help="jitter singular matrices instead of failing")
    run.add_argument("--restarts", type=_positive_int, default=None)
    run.add_argument("--loglik-threshold", type=float, default=None)

    parser = argparse.ArgumentParser(prog="kmle", description="Hard clustering of VAR time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a labelled VAR dataset")
    p.add_argument("--m", type=_positive_int, default=2)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--k", type=_positive_int, default=3)
    p.add_argument("--nc", type=_positive_int, default=15)
    p.add_argument("--t", type=_positive_int, default=200)
    p.add_argument("--noise", choices=["gaussian", "t"], default="gaussian")
    p.add_argument("--dof", type=float, default=5.0)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--radius", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cluster", parents=[common, run], help="fit k-VARs")
    p.add_argument("data_dir")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--init", choices=["random", "oracle"], default="random")
    p.add_argument("--out", default=None, help="result JSON path (default: stdout)")
    p.set_defaults(func=cmd_cluster, default_restarts=1)

    p = sub.add_parser("select", parents=[common, run], help="choose K and p by BIC")
    p.add_argument("data_dir")
    p.add_argument("--k-grid", required=True, help="start:step:end or comma list")
    p.add_argument("--p-grid", required=True, help="start:step:end or comma list")
    p.add_argument("--mode", choices=["grid", "cyclic"], default="grid")
    p.add_argument("--start", default=None, help="K,p starting cell for cyclic mode")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_select, default_restarts=5)

    p = sub.add_parser("evaluate", parents=[common], help="compare two label files")
    p.add_argument("labels_a")
    p.add_argument("labels_b")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", parents=[common], help="score series against a fitted model")
    p.add_argument("data_dir")
    p.add_argument("model")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "restarts", 0) is None:
        args.restarts = args.default_restarts
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ThresholdNotMet as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except DegenerateCluster as exc:
        where = f" (cluster {exc.cluster + 1})" if exc.cluster is not None else ""
        print(f"error: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, KMLEError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
