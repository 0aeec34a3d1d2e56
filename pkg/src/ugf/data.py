"""Series ingestion, rolling windows, chronological splits and synthetic generators."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, EmptyInputError, InsufficientDataError, SchemaError
from .rng import RngStream

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass
class TimeSeries:
    timestamps: np.ndarray  # int64, strictly increasing
    values: np.ndarray  # (T, D) float64
    columns: tuple[str, ...] = ("value",)
    n_rejected: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.timestamps) != len(self.values):
            raise ContractError(
                f"timestamps ({len(self.timestamps)}) and values ({len(self.values)}) differ in length"
            )
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ContractError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.timestamps[start:stop], self.values[start:stop], self.columns)


@dataclass
class WindowBatch:
    contexts: np.ndarray  # (N, L, D)
    targets: np.ndarray  # (N, H, D)
    origin_indices: np.ndarray  # (N,) index t of the last context step
    target_timestamps: np.ndarray | None = None  # (N, H)

    def __len__(self) -> int:
        return len(self.contexts)

    def subset(self, idx) -> "WindowBatch":
        ts = None if self.target_timestamps is None else self.target_timestamps[idx]
        return WindowBatch(self.contexts[idx], self.targets[idx], self.origin_indices[idx], ts)

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> list["WindowBatch"]:
        order = np.arange(len(self)) if order is None else order
        return [self.subset(order[i:i + batch_size]) for i in range(0, len(self), batch_size)]


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    fit_size: int = 0

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if len(values) == 0:
            raise EmptyInputError("cannot fit a standardizer on zero rows")
        std = np.maximum(values.std(axis=0), STD_FLOOR)
        return cls(values.mean(axis=0), std, len(values))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def invert_scale(self, scales: np.ndarray) -> np.ndarray:
        """Map standard deviations back to the original units."""
        return np.asarray(scales, dtype=np.float64) * self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "fit_size": self.fit_size}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), int(d.get("fit_size", 0)))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------
def parse_timestamp(text: str) -> int:
    """Integer stamps pass through; ISO-8601 becomes epoch seconds (naive = UTC)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_csv_series(
    path: str | Path,
    value_columns: Sequence[str] | None = None,
    timestamp_column: str = "timestamp",
) -> TimeSeries:
    """Read a CSV with a header row into a sorted ``TimeSeries``.

    Rows whose timestamp or any value fails to parse (or is non-finite) are
    dropped and counted in ``n_rejected``. Duplicate stamps are an error.
    Lines starting with ``#`` are comments.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        header = reader.fieldnames or []
        if timestamp_column not in header:
            raise SchemaError(f"{path}: missing timestamp column {timestamp_column!r}")
        if value_columns is None:
            value_columns = [c for c in header if c != timestamp_column]
        missing = [c for c in value_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing value column(s) {missing}")
        stamps, rows, rejected = [], [], 0
        for row in reader:
            try:
                ts = parse_timestamp(row[timestamp_column])
                vals = [float(row[c]) for c in value_columns]
            except (ValueError, TypeError, AttributeError):
                rejected += 1
                continue
            if not all(math.isfinite(v) for v in vals):
                rejected += 1
                continue
            stamps.append(ts)
            rows.append(vals)
    if rejected:
        log.info("%s: rejected %d unparseable row(s)", path, rejected)
    if not rows:
        raise EmptyInputError(f"{path}: no usable rows ({rejected} rejected)")
    stamps_arr = np.asarray(stamps, dtype=np.int64)
    order = np.argsort(stamps_arr, kind="stable")
    stamps_arr = stamps_arr[order]
    dup = stamps_arr[1:][np.diff(stamps_arr) == 0]
    if dup.size:
        raise ContractError(f"{path}: duplicate timestamp(s) {sorted(set(dup.tolist()))}")
    values = np.asarray(rows, dtype=np.float64)[order]
    return TimeSeries(stamps_arr, values, tuple(value_columns), rejected)


def write_csv_series(path: str | Path, series: TimeSeries, extra: dict[str, np.ndarray] | None = None,
                     comment: str | None = None, include_values: bool = True) -> None:
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        if not include_values:
            w.writerow(["timestamp", *extra])
            for i, ts in enumerate(series.timestamps):
                w.writerow([int(ts), *(_fmt(extra[k][i]) for k in extra)])
            return
        w.writerow(["timestamp", *series.columns, *extra])
        for i, ts in enumerate(series.timestamps):
            w.writerow([int(ts), *(repr(float(v)) for v in series.values[i]),
                        *(_fmt(extra[k][i]) for k in extra)])


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return int(v)
    return repr(float(v))


# ---------------------------------------------------------------------------
# windows and splits
# ---------------------------------------------------------------------------
def _window_batch(series: TimeSeries, origins: np.ndarray, L: int, H: int) -> WindowBatch:
    origins = np.asarray(origins, dtype=np.int64)
    ctx_idx = origins[:, None] + np.arange(-L + 1, 1)[None, :]
    tgt_idx = origins[:, None] + np.arange(1, H + 1)[None, :]
    return WindowBatch(
        series.values[ctx_idx],
        series.values[tgt_idx],
        origins,
        series.timestamps[tgt_idx],
    )


def make_windows(series: TimeSeries, L: int, H: int, stride: int = 1) -> WindowBatch:
    """All rolling (context, target) pairs; context ends at t, target is t+1..t+H."""
    if L < 1 or H < 1 or stride < 1:
        raise ContractError(f"need L, H, stride >= 1 (got L={L}, H={H}, stride={stride})")
    T = len(series)
    if T < L + H:
        raise InsufficientDataError(f"series has {T} steps; need at least L + H = {L + H}")
    origins = np.arange(L - 1, T - H, stride)
    return _window_batch(series, origins, L, H)


def chronological_split(series: TimeSeries, boundary: int) -> tuple[TimeSeries, TimeSeries]:
    """Train is strictly before ``boundary``; test is at or after it."""
    b = int(np.searchsorted(series.timestamps, boundary, side="left"))
    if b == 0:
        raise EmptyInputError(f"boundary {boundary} leaves the training split empty")
    if b == len(series):
        raise EmptyInputError(f"boundary {boundary} leaves the test split empty")
    return series.slice(0, b), series.slice(b, len(series))


def split_windows(
    series: TimeSeries, boundary: int, L: int, H: int, stride: int = 1
) -> tuple[WindowBatch, WindowBatch]:
    """Train/test windows around a timestamp boundary.

    Train windows have every target before the boundary. Test windows have
    every target at or after it, with warm context allowed to reach back
    across the boundary.
    """
    chronological_split(series, boundary)  # validates the boundary
    b = int(np.searchsorted(series.timestamps, boundary, side="left"))
    T = len(series)
    train_origins = np.arange(L - 1, b - H, stride)
    test_origins = np.arange(max(b - 1, L - 1), T - H, stride)
    if train_origins.size == 0:
        raise InsufficientDataError(f"training span of {b} steps is too short for L + H = {L + H}")
    if test_origins.size == 0:
        raise InsufficientDataError(f"test span of {T - b} steps is too short for H = {H}")
    return _window_batch(series, train_origins, L, H), _window_batch(series, test_origins, L, H)


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------
def synth_regime_ar(
    seed: int,
    T: int,
    regimes: Sequence[tuple[float, float, float]],
    switch_prob: float,
    x0: float | None = None,
) -> tuple[TimeSeries, np.ndarray]:
    """Markov-switching AR(1) around per-regime means.

    ``regimes`` holds ``(ar_coef, noise_std, mean)``; on a switch the next
    regime is drawn uniformly among the others. Returns the series and the
    integer regime label of each step.
    """
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if not regimes:
        raise ContractError("at least one regime is required")
    if not 0.0 <= switch_prob <= 1.0:
        raise ContractError(f"switch_prob must be in [0, 1], got {switch_prob}")
    for k, (a, s, _) in enumerate(regimes):
        if abs(a) >= 1:
            raise ContractError(f"regime {k}: unstable ar_coef {a} (need |a| < 1)")
        if s < 0:
            raise ContractError(f"regime {k}: negative noise_std {s}")
    rng = RngStream(seed)
    K = len(regimes)
    u_switch = rng.uniform((T,))
    u_pick = rng.uniform((T,))
    eps = rng.normal((T,))
    labels = np.empty(T, dtype=np.int64)
    x = np.empty(T)
    k = 0
    prev = regimes[0][2] if x0 is None else float(x0)
    for t in range(T):
        if t > 0 and K > 1 and u_switch[t] < switch_prob:
            j = int(u_pick[t] * (K - 1))
            k = j if j < k else j + 1
        a, s, m = regimes[k]
        prev = m + a * (prev - m) + s * eps[t]
        x[t] = prev
        labels[t] = k
    return TimeSeries(np.arange(T), x[:, None]), labels


def _periodic(spec: dict, t: np.ndarray) -> np.ndarray:
    period = float(spec.get("period", 24.0))
    phase = float(spec.get("phase", 0.0))
    return np.sin(2.0 * np.pi * t / period + phase)


def eval_fn_spec(spec, t: np.ndarray, default: str = "zero") -> np.ndarray:
    """Evaluate a small closed set of time functions described by dicts.

    Kinds: ``zero``, ``constant`` (value), ``sinusoid`` (base + amplitude*sin),
    ``log_sinusoid`` (scale*exp(amplitude*sin)). Callables are used as is.
    """
    if spec is None:
        spec = {"kind": default}
    if callable(spec):
        return np.asarray(spec(t), dtype=np.float64) * np.ones_like(t, dtype=np.float64)
    kind = spec.get("kind")
    if kind == "zero":
        return np.zeros(len(t))
    if kind == "constant":
        return np.full(len(t), float(spec["value"]))
    if kind == "sinusoid":
        return float(spec.get("base", 0.0)) + float(spec.get("amplitude", 1.0)) * _periodic(spec, t)
    if kind == "log_sinusoid":
        return float(spec.get("scale", 1.0)) * np.exp(float(spec.get("amplitude", 1.0)) * _periodic(spec, t))
    raise ContractError(f"unknown function kind {kind!r}")


def synth_heteroskedastic(
    seed: int,
    T: int,
    sigma_fn_spec,
    mean_fn_spec=None,
) -> tuple[TimeSeries, np.ndarray]:
    """``y_t = m(t) + sigma(t) * eps_t``; returns the series and the true sigma(t)."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    t = np.arange(T, dtype=np.float64)
    sigma = eval_fn_spec(sigma_fn_spec, t)
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        bad = int(np.flatnonzero(~(sigma > 0))[0])
        raise ContractError(f"sigma(t) must be positive; sigma({bad}) = {sigma[bad]}")
    mean = eval_fn_spec(mean_fn_spec, t)
    eps = RngStream(seed).normal((T,))
    return TimeSeries(np.arange(T), (mean + sigma * eps)[:, None]), sigma
