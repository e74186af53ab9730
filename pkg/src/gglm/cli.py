"""Command-line interface: ``gglm <subcommand> [options]``.

Every subcommand writes its outputs under ``--out`` and exits 0 on success.
On failure a JSON error report is printed to stderr (and written to
``<out>/error.json`` when ``--out`` is usable) and the exit code is 1
(2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import set_num_threads

EXIT_FAILURE = 1


def _parse_grid(spec: str) -> tuple:
    """``logspace:lo:hi:num`` (base-10 exponents) or a comma-separated list."""
    spec = spec.strip()
    if spec.startswith("logspace:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise argparse.ArgumentTypeError("expected logspace:lo:hi:num")
        lo, hi, num = float(parts[1]), float(parts[2]), int(parts[3])
        return tuple(np.logspace(lo, hi, num))
    try:
        vals = tuple(float(v) for v in spec.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {spec!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_common(p: argparse.ArgumentParser, *names):
    opts = {
        "L": dict(type=_positive_int, default=5, help="number of locations"),
        "d": dict(type=_positive_int, default=5, help="memory depth"),
        "mu": dict(type=_positive_int, default=1, help="states per location"),
        "a": dict(type=float, default=1.0, help="baseline rate (generation)"),
        "b": dict(type=float, default=0.5, help="excitation row sum (generation)"),
        "N": dict(type=_positive_int, default=100_000, help="number of time steps"),
        "seed": dict(type=int, default=0, help="root random seed"),
        "epsilon": dict(type=float, default=0.01, help="confidence budget"),
        "alpha-grid": dict(type=_parse_grid, default="logspace:-4:5:37",
                           help="alpha grid: 'logspace:lo:hi:num' or comma list"),
        "theta-grid": dict(type=_parse_grid, default="0.5,0.75,1,1.25,2",
                           help="theta grid for advanced policies (comma list)"),
        "level": dict(type=float, default=0.95, help="prediction interval level"),
        "p-max": dict(type=_positive_int, default=10, help="largest prediction step"),
        "input": dict(type=Path, help="input file (trajectory or events CSV)"),
        "model": dict(type=Path, help="model or fit-result JSON"),
        "grid": dict(type=Path, help="grid specification JSON"),
        "a-cap": dict(type=float, default=None, help="baseline cap (default 1.1*a)"),
        "b-cap": dict(type=float, default=None, help="row-sum cap (default 1.1*b)"),
        "n-train": dict(type=_positive_int, help="number of training rows"),
    }
    for name in names:
        kw = dict(opts[name])
        if isinstance(kw.get("default"), str) and "type" in kw:
            kw["default"] = kw["type"](kw["default"])
        p.add_argument(f"--{name}", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gglm", description="Spatio-temporal GGLM estimation, certification and prediction.")
    parser.add_argument("--version", action="version", version=f"gglm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *common):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p, *common)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--threads", type=_positive_int, default=None,
                       help="worker threads (default: all cores)")
        p.add_argument("--strict", action="store_true",
                       help="abort on the first malformed input row")
        return p

    add("simulate", "Generate parameters and a Poisson trajectory.",
        "L", "d", "a", "b", "N", "seed")
    add("fit", "Least-squares fit over the box/row-sum set.",
        "input", "d", "mu", "a", "b", "a-cap", "b-cap")
    add("certify", "Confidence intervals for a fitted model.",
        "input", "model", "d", "a", "b", "a-cap", "b-cap", "epsilon", "alpha-grid",
        "theta-grid").add_argument("--basic-only", action="store_true",
                                   help="skip the advanced policies")
    add("predict", "Poisson prediction intervals and non-coverage table.",
        "input", "model", "level", "p-max", "n-train")
    p = add("evaluate", "Average-rate metrics against persistence and seasonal baselines.",
            "input", "model", "n-train", "seed")
    p.add_argument("--period", type=_positive_int, default=12, help="seasonal period")
    p.add_argument("--reps", type=_positive_int, default=100, help="simulation replicas")
    p = add("ingest", "Bin timestamped events into a count trajectory.",
            "input", "grid", "d")
    p.add_argument("--horizon", type=_positive_int, default=None, help="number of time bins")
    p = add("experiment", "Run synthetic Experiment A or B end to end.",
            "L", "d", "a", "b", "N", "seed", "epsilon", "alpha-grid", "theta-grid",
            "level", "p-max")
    p.add_argument("--experiment", choices=["A", "B"], default="B")
    p.add_argument("--test-N", type=int, default=None,
                   help="test horizon (default: N); 0 skips prediction")
    p.add_argument("--basic-only", action="store_true", help="skip the advanced policies")
    return parser


# --------------------------------------------------------------------------
# subcommands


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join(f"--{m}" for m in missing))


def _caps(args):
    from .model import FeasibleSet

    a_cap = args.a_cap if args.a_cap is not None else 1.1 * args.a
    b_cap = args.b_cap if args.b_cap is not None else 1.1 * args.b
    return FeasibleSet.box_row_sum(a_cap, b_cap)


def _load_beta(path: Path):
    from .data_io import load_json
    from .model import ModelShape, unpack_params

    obj = load_json(path)
    if isinstance(obj, tuple):
        return obj
    if obj.get("type") == "fit_result":
        shape = ModelShape(**obj["shape"])
        return unpack_params(np.asarray(obj["beta_hat"]), shape), shape
    raise ValueError(f"{path} does not contain a model")


def run_simulate(args) -> dict:
    from .data_io import save_json, write_trajectory_csv
    from .model import ModelShape
    from .simulate import GenSpec, generate_params, simulate_poisson, spawn_streams

    streams = spawn_streams(args.seed)
    shape = ModelShape(args.L, args.d)
    beta = generate_params(GenSpec(shape, args.a, args.b, streams["params"]))
    traj = simulate_poisson(beta, args.N, streams["train"])
    write_trajectory_csv(traj, args.out / "trajectory.csv")
    save_json((beta, shape), args.out / "truth.json")
    return {"trajectory": "trajectory.csv", "truth": "truth.json", "N": traj.N}


def run_fit(args) -> dict:
    from .data_io import read_trajectory_csv, save_json
    from .estimator import fit_least_squares

    _require(args, "input")
    traj = read_trajectory_csv(args.input, mu=args.mu)
    res = fit_least_squares(traj, _caps(args))
    save_json(res, args.out / "fit.json")
    save_json((res.beta_hat, traj.shape), args.out / "model.json")
    return {"model": "model.json", "iterations": res.iterations,
            "converged": res.converged, "final_residual": res.final_residual}


def run_certify(args) -> dict:
    from .certify import certify
    from .data_io import read_trajectory_csv, save_json
    from .estimator import fit_least_squares

    _require(args, "input")
    traj = read_trajectory_csv(args.input)
    B = _caps(args)
    if args.model is not None:
        beta_hat, shape = _load_beta(args.model)
        if shape != traj.shape:
            raise ValueError(f"model shape {shape} does not match trajectory {traj.shape}")
    else:
        beta_hat = fit_least_squares(traj, B).beta_hat
    rep = certify(traj, beta_hat, B, args.epsilon, args.alpha_grid, args.theta_grid,
                  not args.basic_only)
    save_json(rep, args.out / "certification.json")
    fin = rep.final
    with open(args.out / "intervals.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coord", "beta_hat", "lo", "hi", "basic_bound", "bound"])
        for j in range(traj.shape.kappa()):
            w.writerow([j, repr(float(rep.beta_hat[j])), repr(float(fin.lo[j])),
                        repr(float(fin.hi[j])), repr(float(rep.basic.errors[j])),
                        repr(float(fin.errors[j]))])
    return {"certification": "certification.json", "intervals": "intervals.csv",
            "coverage_certified": bool(fin.certified), "notes": rep.notes}


def run_predict(args) -> dict:
    from .data_io import read_trajectory_csv
    from .predict import noncoverage_table, prediction_intervals

    _require(args, "input", "model")
    traj = read_trajectory_csv(args.input)
    beta_hat, shape = _load_beta(args.model)
    d = shape.d
    n_train = args.n_train if args.n_train is not None else d
    if n_train < d or n_train >= traj.states.shape[0]:
        raise ValueError("--n-train must leave at least one test row after d context rows")
    test_states = traj.states[n_train - d:]
    ivs = prediction_intervals(beta_hat, test_states, range(1, args.p_max + 1), args.level,
                               mode="per_p", t_offset=n_train - d)
    with open(args.out / "intervals.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "k", "p", "mean", "lo", "hi", "observed", "covered"])
        for iv in ivs:
            w.writerow([iv.t, iv.k, iv.p, repr(iv.mean), iv.lo, iv.hi, _num(iv.observed),
                        int(iv.covered)])
    tab = noncoverage_table(beta_hat, test_states, args.p_max, args.level, mode="per_p")
    with open(args.out / "noncoverage.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"loc_{k}" for k in range(shape.n)])
        for row in tab.rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
    return {"intervals": "intervals.csv", "noncoverage": "noncoverage.csv",
            "n_intervals": len(ivs)}


def _num(v: float):
    return int(v) if float(v).is_integer() else repr(v)


def run_evaluate(args) -> dict:
    from .data_io import read_trajectory_csv
    from .predict import evaluate_metrics

    _require(args, "input", "model", "n-train")
    traj = read_trajectory_csv(args.input)
    beta_hat, _ = _load_beta(args.model)
    m = evaluate_metrics(traj.states, args.n_train, beta_hat, args.reps, args.period, args.seed)
    with open(args.out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator"] + [f"loc_{k}" for k in range(traj.shape.n)] + ["MAE"])
        for row in m.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return {"metrics": "metrics.csv", "mae": m.mae, "seasonal_missing": m.seasonal_missing}


def run_ingest(args) -> dict:
    from .data_io import ingest_events, load_grid, save_json, write_trajectory_csv

    _require(args, "input", "grid")
    grid = load_grid(args.grid)
    rep = ingest_events(args.input, grid, horizon=args.horizon, d=args.d, strict=args.strict)
    write_trajectory_csv(rep.trajectory, args.out / "trajectory.csv")
    save_json({"type": "ingest_report", **rep.to_dict()}, args.out / "ingest_report.json")
    for line, why in rep.malformed:
        print(f"warning: line {line}: {why}", file=sys.stderr)
    return {"trajectory": "trajectory.csv", **rep.to_dict()}


def run_experiment_cmd(args) -> dict:
    from .experiment import ExperimentConfig, run_experiment, write_experiment_outputs

    defaults = build_parser().parse_args(["experiment", "--out", "."])
    overrides = {}
    for key in ("a", "b"):
        if getattr(args, key) != getattr(defaults, key):
            overrides[key] = getattr(args, key)
    cfg = ExperimentConfig.preset(
        args.experiment, L=args.L, d=args.d, N=args.N,
        test_N=args.N if args.test_N is None else args.test_N,
        epsilon=args.epsilon, alpha_grid=tuple(args.alpha_grid),
        theta_grid=tuple(args.theta_grid), seed=args.seed, p_max=args.p_max,
        level=args.level, advanced=not args.basic_only, **overrides)
    res = run_experiment(cfg)
    return write_experiment_outputs(res, args.out)


COMMANDS = {
    "simulate": run_simulate,
    "fit": run_fit,
    "certify": run_certify,
    "predict": run_predict,
    "evaluate": run_evaluate,
    "ingest": run_ingest,
    "experiment": run_experiment_cmd,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_num_threads(args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        from threadpoolctl import threadpool_limits

        # BLAS stays single-threaded; parallelism is ours and deterministic
        with threadpool_limits(limits=1):
            result = COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - surfaced as a structured report
        report = {"status": "error", "command": args.command,
                  "error_type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(report), file=sys.stderr)
        try:
            with open(args.out / "error.json", "w", encoding="utf-8") as fh:
                fh.write(json.dumps(report, indent=1) + "\n")
        except OSError:
            pass
        return EXIT_FAILURE
    print(json.dumps({"status": "ok", "command": args.command, **_jsonable(result)},
                     sort_keys=True))
    return 0


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist()
                                 if isinstance(o, np.ndarray) else str(o)))


if __name__ == "__main__":
    sys.exit(main())
