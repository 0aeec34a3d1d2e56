"""Glue shared by the CLI and the experiments: data preparation and batch forecasting."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .data import (
    Standardizer,
    TimeSeries,
    WindowBatch,
    load_csv_series,
    split_windows,
    synth_heteroskedastic,
    synth_regime_ar,
)
from .errors import ConfigError, ContractError
from .model import UGGenerator, point_forecast
from .risk import Forecast, RiskPolicy, risk_score, route
from .rng import RngStream


@dataclass
class PreparedData:
    series: TimeSeries
    labels: np.ndarray | None  # regime label (regime_ar) or true sigma (heteroskedastic) per step
    boundary: int
    standardizer: Standardizer
    train: WindowBatch  # standardized
    val: WindowBatch
    test: WindowBatch


def generate_synthetic(spec: dict, seed: int) -> tuple[TimeSeries, np.ndarray]:
    seed = int(spec.get("seed", seed))
    if spec["kind"] == "regime_ar":
        regimes = [tuple(float(v) for v in r) for r in spec["regimes"]]
        return synth_regime_ar(seed, int(spec["T"]), regimes, float(spec["switch_prob"]), spec.get("x0"))
    return synth_heteroskedastic(seed, int(spec["T"]), spec["sigma"], spec.get("mean"))


def load_series(cfg: RunConfig) -> tuple[TimeSeries, np.ndarray | None]:
    data = cfg.data
    if not data:
        raise ConfigError("this command needs a data section in the config")
    if data.get("source", "synthetic") == "csv":
        series = load_csv_series(data["path"], data.get("value_columns"), data.get("timestamp_column", "timestamp"))
        labels = None
        if data.get("labels_path"):
            lab = load_csv_series(data["labels_path"], None, "timestamp")
            idx = np.searchsorted(lab.timestamps, series.timestamps)
            if np.any(idx >= len(lab)) or np.any(lab.timestamps[np.minimum(idx, len(lab) - 1)] != series.timestamps):
                raise ContractError("labels file does not cover every series timestamp")
            labels = lab.values[idx, 0]
        return series, labels
    return generate_synthetic(data["synthetic"], cfg.seed)


def _standardize(batch: WindowBatch, st: Standardizer) -> WindowBatch:
    return WindowBatch(st.apply(batch.contexts), st.apply(batch.targets), batch.origin_indices,
                       batch.target_timestamps)


def prepare(series: TimeSeries, L: int, H: int, boundary: int | None = None,
            split_fraction: float = 0.8, val_fraction: float = 0.2, stride: int = 1,
            labels: np.ndarray | None = None) -> PreparedData:
    """Chronological split, train-only standardizer, then windows (val = tail of train)."""
    if boundary is None:
        boundary = int(series.timestamps[int(len(series) * split_fraction)])
    b = int(np.searchsorted(series.timestamps, boundary))
    st = Standardizer.fit(series.values[:b])
    train_all, test = split_windows(series, boundary, L, H, stride)
    n_val = max(1, int(round(len(train_all) * val_fraction)))
    if n_val >= len(train_all):
        raise ContractError(f"only {len(train_all)} training windows; cannot hold out {n_val} for validation")
    fit_idx = np.arange(len(train_all) - n_val)
    val_idx = np.arange(len(train_all) - n_val, len(train_all))
    return PreparedData(series, labels, boundary, st,
                        _standardize(train_all.subset(fit_idx), st),
                        _standardize(train_all.subset(val_idx), st),
                        _standardize(test, st))


def prepare_from_config(cfg: RunConfig) -> PreparedData:
    series, labels = load_series(cfg)
    d = cfg.data
    if series.dim != cfg.model.D:
        raise ContractError(f"data has D={series.dim} value columns but model.D={cfg.model.D}")
    return prepare(series, cfg.model.L, cfg.model.H, d.get("split_boundary"), d.get("split_fraction", 0.8),
                   d.get("val_fraction", 0.2), int(d.get("stride", 1)), labels)


def risk_scores(model: UGGenerator, contexts_std: np.ndarray, st: Standardizer, policy: RiskPolicy,
                rng: RngStream, **overrides) -> np.ndarray:
    """Risk score per window, on the original scale."""
    res = model.predict(contexts_std, rng, S=1, **overrides)
    sig = st.invert_scale(res.output.sigma_y.data)
    return np.array([risk_score(s, policy) for s in sig])


def forecast_windows(
    model: UGGenerator,
    contexts: np.ndarray,
    st: Standardizer,
    policy: RiskPolicy,
    rng: RngStream,
    S: int = 500,
    gate_override=None,
    out_gate_override=None,
) -> list[dict]:
    """Forecast every context window (original scale in and out) with risk routing."""
    contexts = np.asarray(contexts, dtype=np.float64)
    res = model.predict(st.apply(contexts), rng, S=1, gate_override=gate_override,
                        out_gate_override=out_gate_override)
    mu = st.invert(res.output.mu_y.data)
    sigma = st.invert_scale(res.output.sigma_y.data)
    g_out = res.output.gate_out.data
    trace = res.gate.gate.data.mean(axis=-1)
    policy = replace(policy, S_std=S, S_rob=max(policy.S_rob, S))
    rows = []
    for n in range(len(contexts)):
        routed = route(Forecast(mu[n], sigma[n], float(g_out[n])), contexts[n, -1], policy, rng)
        mean, median = point_forecast(routed.forecast.samples)
        rows.append({
            "mu": mu[n], "sigma": sigma[n], "gate_out": float(g_out[n]), "gate_trace": trace[n],
            "risk": routed.risk, "action": routed.action,
            "mu_post": routed.forecast.mu, "sigma_post": routed.forecast.sigma,
            "samples": routed.forecast.samples, "mean": mean, "median": median,
        })
    return rows
