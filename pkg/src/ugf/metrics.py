"""Forecast error metrics in eight columns: pointwise, normalized, median-based
and scale-free, plus regime-sliced reports and a fixed-width table row."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, EmptyInputError, UndefinedMetricError

COLUMNS = ("mse", "mae", "nmse", "nmae", "mse_median", "mae_median", "mape", "mase")
HEADERS = ("MSE", "MAE", "NMSE", "NMAE", "mSE", "mAE", "MAPE", "MASE")
MAPE_EPS = 1e-8
DEFAULT_SEASON = 24


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ContractError(f"shape mismatch: y {y.shape} vs yhat {yhat.shape}")
    if y.size == 0:
        raise EmptyInputError("metrics need at least one point")
    return y.reshape(-1), yhat.reshape(-1)


def point_metrics(y, yhat) -> tuple[float, float]:
    y, yhat = _pair(y, yhat)
    e = y - yhat
    return float(np.mean(e * e)), float(np.mean(np.abs(e)))


def normalized_metrics(y, yhat) -> tuple[float, float]:
    """MSE / mean(y^2) and MAE / mean(|y|)."""
    y, yhat = _pair(y, yhat)
    mse, mae = point_metrics(y, yhat)
    d_sq = float(np.mean(y * y))
    d_abs = float(np.mean(np.abs(y)))
    if d_sq <= 0:
        raise UndefinedMetricError("NMSE undefined: mean(y^2) == 0")
    if d_abs <= 0:
        raise UndefinedMetricError("NMAE undefined: mean(|y|) == 0")
    return mse / d_sq, mae / d_abs


def robust_metrics(y, yhat) -> tuple[float, float]:
    """Medians of squared and absolute errors."""
    y, yhat = _pair(y, yhat)
    e = y - yhat
    return float(np.median(e * e)), float(np.median(np.abs(e)))


def seasonal_naive_scale(y_insample, season: int = DEFAULT_SEASON) -> float:
    """Mean absolute error of the lag-``season`` naive forecast in sample."""
    x = np.asarray(y_insample, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) <= season:
        raise UndefinedMetricError(f"MASE undefined: in-sample length {len(x)} <= season {season}")
    return float(np.mean(np.abs(x[season:] - x[:-season])))


def scale_free_metrics(y, yhat, y_train_insample, season: int = DEFAULT_SEASON,
                       eps: float = MAPE_EPS) -> tuple[float, float]:
    y, yhat = _pair(y, yhat)
    small = np.flatnonzero(np.abs(y) <= eps)
    if small.size:
        raise UndefinedMetricError(f"MAPE undefined: |y| <= {eps} at flat indices {small[:20].tolist()}")
    mape = float(np.mean(np.abs(y - yhat) / np.abs(y)))
    scale = seasonal_naive_scale(y_train_insample, season)
    if scale <= 0:
        raise UndefinedMetricError("MASE undefined: seasonal-naive in-sample error is 0")
    mae = float(np.mean(np.abs(y - yhat)))
    return mape, mae / scale


@dataclass
class MetricsReport:
    mse: float
    mae: float
    nmse: float
    nmae: float
    mse_median: float
    mae_median: float
    mape: float
    mase: float
    n_points: int = 0
    horizon: int = 0
    split: str = "test"
    shock: "MetricsReport | None" = None

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COLUMNS)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.shock is None:
            d["shock"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        shock = d.pop("shock", None)
        return cls(**d, shock=None if shock is None else cls.from_dict(shock))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def compute_report(y, yhat, y_train_insample, season: int = DEFAULT_SEASON,
                   horizon: int = 0, split: str = "test") -> MetricsReport:
    y_arr, yhat_arr = _pair(y, yhat)
    mse, mae = point_metrics(y_arr, yhat_arr)
    nmse, nmae = normalized_metrics(y_arr, yhat_arr)
    mse_med, mae_med = robust_metrics(y_arr, yhat_arr)
    mape, mase = scale_free_metrics(y_arr, yhat_arr, y_train_insample, season)
    return MetricsReport(mse, mae, nmse, nmae, mse_med, mae_med, mape, mase,
                         n_points=int(y_arr.size), horizon=horizon, split=split)


def shock_slice(y, yhat, y_train_insample, regime_labels, shock_label,
                season: int = DEFAULT_SEASON, horizon: int = 0, split: str = "test") -> MetricsReport:
    """All eight metrics on the points whose label equals ``shock_label``."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    labels = np.asarray(regime_labels)
    if labels.shape != y.shape:
        raise ContractError(f"labels shape {labels.shape} != targets shape {y.shape}")
    mask = labels == shock_label
    if not mask.any():
        raise EmptyInputError(f"no points carry shock label {shock_label!r}")
    return compute_report(y[mask], yhat[mask], y_train_insample, season, horizon, f"{split}:shock")


def format_table1_row(report: MetricsReport, name: str | None = None) -> str:
    """The eight columns at 4 decimal places, separated by `` & ``."""
    cells = [f"{v:.4f}" for v in report.values()]
    return " & ".join(([name] if name else []) + cells)


def parse_table1_row(row: str) -> MetricsReport:
    cells = [c.strip() for c in row.split("&")]
    if len(cells) == len(COLUMNS) + 1:
        cells = cells[1:]
    if len(cells) != len(COLUMNS):
        raise ContractError(f"expected {len(COLUMNS)} metric cells, got {len(cells)}")
    return MetricsReport(*(float(c) for c in cells))
