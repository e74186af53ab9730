"""Event ingestion, train/test splitting and artifact (de)serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .model import FeasibleSet, ModelShape, ParamVector, Trajectory, unpack_params

__all__ = [
    "FORMAT_VERSION",
    "GridSpec",
    "EventRecord",
    "IngestReport",
    "MalformedInputError",
    "load_grid",
    "parse_timestamp",
    "ingest_events",
    "generate_synthetic_events",
    "train_test_split",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "save_json",
    "load_json",
    "param_to_dict",
    "param_from_dict",
]

FORMAT_VERSION = 1


class MalformedInputError(ValueError):
    pass


# --------------------------------------------------------------------------
# grid and events


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp; naive values are taken as UTC."""
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


@dataclass(frozen=True)
class GridSpec:
    """Rectangular cells ``(lon_min, lon_max, lat_min, lat_max)`` and a time binning.

    ``time_bin`` is ``"month"`` (calendar months from the origin's month) or a
    fixed bin width in days.
    """

    cells: tuple
    time_bin: object = "month"
    origin: datetime = datetime(1970, 1, 1, tzinfo=timezone.utc)

    def __post_init__(self):
        cells = tuple(tuple(float(v) for v in c) for c in self.cells)
        if not cells:
            raise ValueError("grid needs at least one cell")
        for c in cells:
            if len(c) != 4 or not all(math.isfinite(v) for v in c):
                raise ValueError(f"bad cell {c}")
            if not (c[0] < c[1] and c[2] < c[3]):
                raise ValueError(f"cell {c} has empty extent")
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                a, b = cells[i], cells[j]
                if min(a[1], b[1]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[2], b[2]):
                    raise ValueError(f"cells {i} and {j} overlap")
        object.__setattr__(self, "cells", cells)
        if self.time_bin != "month":
            days = float(self.time_bin)
            if not days > 0:
                raise ValueError("time bin width must be positive")
            object.__setattr__(self, "time_bin", days)
        origin = self.origin
        if isinstance(origin, str):
            origin = parse_timestamp(origin)
        elif origin.tzinfo is None:
            origin = origin.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "origin", origin)

    @property
    def L(self) -> int:
        return len(self.cells)

    def cell_of(self, lon: float, lat: float) -> int | None:
        """Lowest cell id whose half-open rectangle contains the point."""
        for i, (x0, x1, y0, y1) in enumerate(self.cells):
            if x0 <= lon < x1 and y0 <= lat < y1:
                return i
        return None

    def bin_of(self, ts: datetime) -> int:
        if self.time_bin == "month":
            return (ts.year - self.origin.year) * 12 + (ts.month - self.origin.month)
        width = timedelta(days=self.time_bin)
        return math.floor((ts - self.origin) / width)

    def to_dict(self) -> dict:
        tb = self.time_bin if self.time_bin == "month" else {"days": self.time_bin}
        return {"cells": [list(c) for c in self.cells], "time_bin": tb,
                "origin": self.origin.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        tb = d.get("time_bin", "month")
        if isinstance(tb, dict):
            tb = float(tb["days"])
        return cls(tuple(tuple(c) for c in d["cells"]), tb,
                   parse_timestamp(d.get("origin", "1970-01-01T00:00:00")))


def load_grid(path) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return GridSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class EventRecord:
    timestamp: datetime
    lon: float
    lat: float


@dataclass
class IngestReport:
    trajectory: Trajectory
    n_events: int
    n_dropped: int
    malformed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n_events": self.n_events, "n_dropped": self.n_dropped,
                "n_ingested": int(self.trajectory.states.sum()),
                "malformed": [{"line": ln, "reason": why} for ln, why in self.malformed]}


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline="")
    return source


def ingest_events(source, grid: GridSpec, horizon: int | None = None, d: int = 1,
                  strict: bool = False) -> IngestReport:
    """Count events per (time bin, cell).

    Parameters
    ----------
    source : path or text stream
        CSV with header ``timestamp,lat,lon``.
    grid : GridSpec
    horizon : int, optional
        Number of time bins ``T``. Defaults to one past the last event's bin.
        Events outside ``[0, T)`` or outside every cell are dropped.
    d : int
        Memory depth recorded in the returned trajectory's shape; the first
        ``d`` bins act as its lag prefix.
    strict : bool
        Raise on the first malformed row instead of skipping it.
    """
    fh = _open_text(source)
    close = fh is not source
    events: list[tuple[int, int]] = []
    malformed: list[tuple[int, str]] = []
    n_rows = 0
    n_dropped = 0
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None:
            cols = [h.strip().lower() for h in header]
            if sorted(cols) != ["lat", "lon", "timestamp"]:
                raise MalformedInputError(f"line 1: expected header timestamp,lat,lon, got {header}")
            ix = {name: cols.index(name) for name in cols}
            for line_no, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    if len(row) != 3:
                        raise ValueError(f"expected 3 fields, got {len(row)}")
                    ts = parse_timestamp(row[ix["timestamp"]])
                    lat = float(row[ix["lat"]])
                    lon = float(row[ix["lon"]])
                    if not (math.isfinite(lat) and math.isfinite(lon)):
                        raise ValueError("non-finite coordinate")
                except ValueError as exc:
                    if strict:
                        raise MalformedInputError(f"line {line_no}: {exc}") from exc
                    malformed.append((line_no, str(exc)))
                    continue
                n_rows += 1
                cell = grid.cell_of(lon, lat)
                b = grid.bin_of(ts)
                if cell is None or b < 0:
                    n_dropped += 1
                    continue
                events.append((b, cell))
    finally:
        if close:
            fh.close()
    if horizon is None:
        horizon = max([b for b, _ in events], default=-1) + 1
        horizon = max(horizon, d)
    counts = np.zeros((horizon, grid.L))
    for b, cell in events:
        if b < horizon:
            counts[b, cell] += 1
        else:
            n_dropped += 1
    traj = Trajectory(ModelShape(grid.L, d), counts, "poisson")
    return IngestReport(traj, n_rows, n_dropped, malformed)


def generate_synthetic_events(counts, grid: GridSpec, seed=0) -> str:
    """CSV text whose ingestion through ``grid`` reproduces ``counts``.

    Points are drawn uniformly inside each cell (strictly interior) and at a
    uniform time inside each bin; rows are shuffled.
    """
    from .simulate import make_rng

    counts = np.asarray(counts)
    rng = make_rng(seed)
    rows = []
    for b in range(counts.shape[0]):
        if grid.time_bin == "month":
            y, m = divmod(grid.origin.month - 1 + b, 12)
            start = grid.origin.replace(year=grid.origin.year + y, month=m + 1, day=1,
                                        hour=0, minute=0, second=0, microsecond=0)
            span = 27.0 * 86400.0
        else:
            start = grid.origin + timedelta(days=grid.time_bin * b)
            span = grid.time_bin * 86400.0 * 0.999
        for k in range(counts.shape[1]):
            x0, x1, y0, y1 = grid.cells[k]
            for _ in range(int(counts[b, k])):
                lon = x0 + (x1 - x0) * (0.001 + 0.998 * rng.random())
                lat = y0 + (y1 - y0) * (0.001 + 0.998 * rng.random())
                ts = start + timedelta(seconds=float(rng.random() * span))
                rows.append((ts.isoformat(), repr(lat), repr(lon)))
    order = rng.permutation(len(rows))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "lat", "lon"])
    for i in order:
        w.writerow(rows[i])
    return buf.getvalue()


# --------------------------------------------------------------------------
# splitting and trajectory CSV


def train_test_split(traj: Trajectory, n_train: int) -> tuple[Trajectory, Trajectory]:
    """Split states at row ``n_train``; the test part keeps ``d`` context rows."""
    d = traj.shape.d
    T = traj.states.shape[0]
    if n_train < d + 1:
        raise ValueError(f"n_train must be >= d + 1 = {d + 1}")
    if n_train > T:
        raise ValueError(f"horizon too short: n_train={n_train} > T={T}")
    train = Trajectory(traj.shape, traj.states[:n_train].copy(), traj.kind)
    test = Trajectory(traj.shape, traj.states[n_train - d:].copy(), traj.kind)
    return train, test


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV ``t,loc_0,...``; ``t`` runs from ``-d+1`` so rows ``t <= 0`` are the prefix."""
    d = traj.shape.d
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"loc_{i}" for i in range(traj.states.shape[1])])
        for i, row in enumerate(traj.states):
            w.writerow([i - d + 1] + [_fmt(v) for v in row])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_trajectory_csv(path, mu: int = 1, kind: str | None = None,
                        d: int | None = None) -> Trajectory:
    """Inverse of :func:`write_trajectory_csv`; ``d`` is read from the first ``t``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "t":
            raise MalformedInputError("trajectory CSV must start with a 't' column")
        ts, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise MalformedInputError(f"line {line_no}: {exc}") from exc
    if not rows:
        raise MalformedInputError("trajectory CSV has no rows")
    if any(b - a != 1 for a, b in zip(ts, ts[1:])):
        raise MalformedInputError("time column must increase by 1")
    d_file = 1 - ts[0]
    if d is None:
        d = d_file
    elif d != d_file:
        raise ValueError(f"file encodes d={d_file}, expected {d}")
    states = np.asarray(rows)
    if states.shape[1] % mu:
        raise ValueError("column count is not a multiple of mu")
    if kind is None:
        kind = "categorical" if mu > 1 else (
            "poisson" if np.all(states == np.round(states)) else "continuous")
    return Trajectory(ModelShape(states.shape[1] // mu, d, mu), states, kind)


# --------------------------------------------------------------------------
# JSON artifacts


def param_to_dict(beta: ParamVector, shape: ModelShape) -> dict:
    return {"shape": shape.to_dict(), "beta": beta.flat.tolist()}


def param_from_dict(d: dict) -> tuple[ParamVector, ModelShape]:
    shape = ModelShape(**d["shape"])
    flat = np.asarray(d["beta"], dtype=np.float64)
    if flat.shape != (shape.kappa(),):
        raise ValueError(
            f"dimension mismatch: {flat.size} values for kappa={shape.kappa()}")
    return unpack_params(flat, shape), shape


def _encode(obj) -> dict:
    from .certify import CertificationReport, ConfidenceSet
    from .estimator import FitResult

    if isinstance(obj, FitResult):
        return {"type": "fit_result", **obj.to_dict()}
    if isinstance(obj, ConfidenceSet):
        return {"type": "confidence_set", **obj.to_dict()}
    if isinstance(obj, CertificationReport):
        return {"type": "certification", **obj.to_dict()}
    if isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], ParamVector):
        return {"type": "model", **param_to_dict(*obj)}
    if isinstance(obj, dict):
        return {"type": obj.get("type", "report"), **obj}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_json(obj, path) -> None:
    """Write an artifact with a ``format_version`` field.

    Accepts ``(ParamVector, ModelShape)``, ``FitResult``, ``ConfidenceSet``,
    ``CertificationReport`` or a plain dict. Floats are written with
    round-trip precision.
    """
    payload = {"format_version": FORMAT_VERSION, **_encode(obj)}
    text = json.dumps(payload, indent=1, sort_keys=True, allow_nan=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def load_json(path, expect_kappa: int | None = None):
    """Load an artifact written by :func:`save_json`.

    Models come back as ``(ParamVector, ModelShape)``, confidence sets as
    :class:`ConfidenceSet`, everything else as a dict.
    """
    from .certify import AffineCertificate, ConfidenceSet

    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"corrupt JSON artifact {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    kind = payload.get("type")
    if kind in ("model", "fit_result"):
        shape = ModelShape(**payload["shape"])
        key = "beta" if kind == "model" else "beta_hat"
        flat = np.asarray(payload[key], dtype=np.float64)
        if flat.shape != (shape.kappa(),) or (expect_kappa is not None
                                              and shape.kappa() != expect_kappa):
            raise ValueError(f"dimension mismatch: {flat.size} parameters, "
                             f"kappa={shape.kappa()}, expected {expect_kappa}")
        if kind == "model":
            return unpack_params(flat, shape), shape
        return payload
    if kind == "confidence_set":
        shape = ModelShape(**payload["shape"])
        if expect_kappa is not None and shape.kappa() != expect_kappa:
            raise ValueError("dimension mismatch")
        base = FeasibleSet(**payload["base"])
        certs = [AffineCertificate.from_dict(c) for c in payload["certificates"]]
        for c in certs:
            if c.slope.shape != (shape.kappa(),):
                raise ValueError("dimension mismatch in certificate slope")
        return ConfidenceSet(certs, base, shape, float(payload["nominal_coverage"]))
    return payload
