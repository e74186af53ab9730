"""Generalized linear models for spatio-temporal event counts.

Estimation by monotone variational inequalities, martingale-based
confidence intervals and multi-step Poisson forecasting.
"""

__version__ = "0.1.0"

from .certify import (AffineCertificate, CertificationReport, ConfidenceCertifier,
                      ConfidenceSet, IntervalResult, coordinate_intervals)
from .concentration import (BoundConfig, RateFunction, fenchel_transform, online_bound,
                            paper_alpha_grid, worst_case_quantile)
from .data_io import (GridSpec, ingest_events, load_json, read_trajectory_csv, save_json,
                      write_trajectory_csv)
from .estimator import (FitConfig, FitResult, GGLMEstimator, fit_least_squares,
                        fit_vi_extragradient)
from .model import (EXP, IDENTITY, SIGMOID, FeasibleSet, LinkFunction, ModelShape,
                    ParamVector, Trajectory, pack_params, unpack_params)
from .predict import (conditional_mean, evaluate_metrics, noncoverage_table,
                      poisson_interval, prediction_intervals)
from .simulate import GenSpec, generate_params, simulate_categorical, simulate_poisson

__all__ = [
    "__version__",
    "AffineCertificate", "CertificationReport", "ConfidenceCertifier", "ConfidenceSet",
    "IntervalResult", "coordinate_intervals",
    "BoundConfig", "RateFunction", "fenchel_transform", "online_bound", "paper_alpha_grid",
    "worst_case_quantile",
    "GridSpec", "ingest_events", "load_json", "read_trajectory_csv", "save_json",
    "write_trajectory_csv",
    "FitConfig", "FitResult", "GGLMEstimator", "fit_least_squares", "fit_vi_extragradient",
    "EXP", "IDENTITY", "SIGMOID", "FeasibleSet", "LinkFunction", "ModelShape", "ParamVector",
    "Trajectory", "pack_params", "unpack_params",
    "conditional_mean", "evaluate_metrics", "noncoverage_table", "poisson_interval",
    "prediction_intervals",
    "GenSpec", "generate_params", "simulate_categorical", "simulate_poisson",
]
