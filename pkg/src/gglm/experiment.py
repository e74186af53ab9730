"""Synthetic Poisson experiments: simulate, fit, certify and predict end to end."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certify import DEFAULT_THETA_GRID, CertificationReport, certify
from .concentration import paper_alpha_grid
from .estimator import FitConfig, FitResult, fit_least_squares
from .model import FeasibleSet, ModelShape, ParamVector, Trajectory
from .predict import NoncoverageTable, noncoverage_table
from .simulate import GenSpec, generate_params, simulate_poisson, spawn_streams

__all__ = ["PRESETS", "ExperimentConfig", "ExperimentResult", "run_experiment",
           "error_summary", "write_experiment_outputs"]

PRESETS = {"A": {"a": 1.0, "b": 1.0}, "B": {"a": 1.0, "b": 0.5}}


@dataclass(frozen=True)
class ExperimentConfig:
    L: int = 5
    d: int = 5
    a: float = 1.0
    b: float = 0.5
    N: int = 100_000
    test_N: int = 100_000
    epsilon: float = 0.01
    alpha_grid: tuple = tuple(paper_alpha_grid())
    theta_grid: tuple = DEFAULT_THETA_GRID
    seed: int = 0
    p_max: int = 10
    level: float = 0.95
    advanced: bool = True
    cap_factor: float = 1.1

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown experiment {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def shape(self) -> ModelShape:
        return ModelShape(self.L, self.d)

    @property
    def feasible_set(self) -> FeasibleSet:
        return FeasibleSet.box_row_sum(self.cap_factor * self.a, self.cap_factor * self.b)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    beta: ParamVector
    train: Trajectory
    test: Trajectory | None
    fit: FitResult
    report: CertificationReport
    noncoverage: NoncoverageTable | None
    timings: dict = field(default_factory=dict)

    @property
    def actual_errors(self) -> np.ndarray:
        return np.abs(self.fit.flat - self.beta.flat)

    @property
    def mean_count(self) -> float:
        """``(1 / (L N)) sum_t sum_k z_t[k]`` over the training horizon."""
        return float(self.train.responses.mean())

    def running_mean(self) -> np.ndarray:
        tot = self.train.responses.mean(axis=1)
        return np.cumsum(tot) / np.arange(1, tot.size + 1)

    def summary(self) -> dict:
        out = {"config": {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in self.config.__dict__.items()},
               "mean_count": self.mean_count,
               "fit_iterations": self.fit.iterations,
               "fit_converged": self.fit.converged,
               "timings_sec": self.timings,
               "notes": self.report.notes}
        out.update(error_summary(self))
        if self.noncoverage is not None:
            out["noncoverage_mean_by_p"] = self.noncoverage.mean_by_p().tolist()
        return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Simulate, fit, certify and score predictions for one configuration.

    Streams: parameters, training path, test path and replicas come from
    ``SeedSequence(cfg.seed).spawn(4)`` in that order. The test path starts
    from the last ``d`` training states.
    """
    streams = spawn_streams(cfg.seed)
    timings = {}
    t0 = time.perf_counter()
    beta = generate_params(GenSpec(cfg.shape, cfg.a, cfg.b, streams["params"]))
    train = simulate_poisson(beta, cfg.N, streams["train"])
    test = None
    if cfg.test_N:
        test = simulate_poisson(beta, cfg.test_N, streams["test"],
                                init=train.states[-cfg.d:])
    timings["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    B = cfg.feasible_set
    fit = fit_least_squares(train, B, FitConfig())
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = certify(train, fit.beta_hat, B, cfg.epsilon, cfg.alpha_grid, cfg.theta_grid,
                     cfg.advanced, truth=beta)
    timings["certify"] = time.perf_counter() - t0

    nc = None
    if test is not None:
        t0 = time.perf_counter()
        nc = noncoverage_table(fit.beta_hat, test.states, cfg.p_max, cfg.level, mode="common")
        timings["predict"] = time.perf_counter() - t0
    return ExperimentResult(cfg, beta, train, test, fit, report, nc, timings)


def error_summary(res: ExperimentResult) -> dict:
    """Median and max of actual errors and bounds, overall and on interactions."""
    n = res.config.shape.n
    act = res.actual_errors
    rows = {"actual": act, "basic": res.report.basic.errors}
    if res.report.advanced is not None:
        rows["advanced"] = res.report.advanced.errors
    out = {}
    for name, v in rows.items():
        out[name] = {"median": float(np.median(v)), "max": float(np.max(v)),
                     "median_interactions": float(np.median(v[n:])),
                     "max_interactions": float(np.max(v[n:])),
                     "max_birth": float(np.max(v[:n]))}
    if "advanced" in rows:
        out["advanced_dominates_fraction"] = float(np.mean(rows["advanced"] >= act))
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def write_experiment_outputs(res: ExperimentResult, out_dir) -> dict:
    """Write the error table, sorted-error data, non-coverage table and summary."""
    import json

    from .data_io import save_json, write_trajectory_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summ = error_summary(res)
    names = [k for k in ("actual", "basic", "advanced") if k in summ]
    _write_csv(out / "table1_errors.csv",
               ["row", "median", "max", "median_interactions", "max_interactions"],
               [[k, summ[k]["median"], summ[k]["max"], summ[k]["median_interactions"],
                 summ[k]["max_interactions"]] for k in names])
    act = res.actual_errors
    basic = res.report.basic.errors
    adv = res.report.advanced.errors if res.report.advanced is not None else basic
    order = np.argsort(adv, kind="stable")
    _write_csv(out / "sorted_errors.csv",
               ["rank", "coord", "actual_error", "basic_bound", "advanced_bound"],
               [[i, int(j), float(act[j]), float(basic[j]), float(adv[j])]
                for i, j in enumerate(order)])
    if res.noncoverage is not None:
        L = res.config.shape.n
        _write_csv(out / "table2_noncoverage.csv",
                   ["row"] + [f"loc_{k}" for k in range(L)], res.noncoverage.rows())
    save_json((res.beta, res.config.shape), out / "truth.json")
    save_json(res.fit, out / "fit.json")
    save_json(res.report, out / "certification.json")
    write_trajectory_csv(res.train, out / "train.csv")
    summary = res.summary()
    # wall-clock timings vary run to run; keep them out of the hashed outputs
    summary.pop("timings_sec", None)
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
