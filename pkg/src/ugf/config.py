"""JSON run configuration: sectioned, schema-checked, unknown keys rejected."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .attention import AttentionConfig
from .data import parse_timestamp
from .errors import ConfigError
from .model import ModelConfig
from .risk import RiskPolicy
from .training import TrainConfig
from .wiae import AdversarialConfig

MODES = ("likelihood", "adversarial", "combined")

DATA_KEYS = {"source", "path", "value_columns", "timestamp_column", "synthetic",
             "split_boundary", "split_fraction", "val_fraction", "stride", "labels_path"}
SYNTH_KEYS = {
    "regime_ar": {"kind", "T", "regimes", "switch_prob", "x0", "seed"},
    "heteroskedastic": {"kind", "T", "sigma", "mean", "seed"},
}
FORECAST_KEYS = {"samples", "gate_override", "out_gate_override"}
EVALUATE_KEYS = {"season", "shock_label", "point"}
RISK_EXTRA = {"tau_quantile"}
TOP_KEYS = {"seed", "out_dir", "mode", "data", "model", "train", "adversarial", "risk",
            "forecast", "evaluate"}


def _reject_unknown(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def _build(cls, d: dict, where: str, drop=()):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown({k: v for k, v in d.items() if k not in drop}, allowed, where)
    try:
        return cls(**{k: v for k, v in d.items() if k not in drop})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    mode: str = "likelihood"
    data: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)
    risk: RiskPolicy = field(default_factory=RiskPolicy)
    tau_quantile: float | None = 0.9
    forecast: dict = field(default_factory=lambda: {"samples": 500})
    evaluate: dict = field(default_factory=lambda: {"season": 24, "shock_label": 1, "point": "mean"})
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        # where outputs land does not change what is computed
        return config_hash({k: v for k, v in self.raw.items() if k != "out_dir"})


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]


def _validate_data(data: dict) -> dict:
    _reject_unknown(data, DATA_KEYS, "data")
    if not data:
        return data  # commands that never touch a series (gradcheck, evaluate)
    source = data.get("source", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {source!r}")
    if source == "csv" and "path" not in data:
        raise ConfigError("data.path is required for csv sources")
    if source == "synthetic":
        syn = data.get("synthetic")
        if not isinstance(syn, dict):
            raise ConfigError("data.synthetic is required for synthetic sources")
        kind = syn.get("kind")
        if kind not in SYNTH_KEYS:
            raise ConfigError(f"data.synthetic.kind must be one of {sorted(SYNTH_KEYS)}, got {kind!r}")
        _reject_unknown(syn, SYNTH_KEYS[kind], "data.synthetic")
        T = syn.get("T")
        if not isinstance(T, int) or T < 1:
            raise ConfigError(f"data.synthetic.T must be a positive integer, got {T!r}")
    if "split_boundary" in data and isinstance(data["split_boundary"], str):
        data["split_boundary"] = parse_timestamp(data["split_boundary"])
    frac = data.get("split_fraction", 0.8)
    if not 0 < frac < 1:
        raise ConfigError(f"data.split_fraction must lie in (0, 1), got {frac}")
    vf = data.get("val_fraction", 0.2)
    if not 0 < vf < 1:
        raise ConfigError(f"data.val_fraction must lie in (0, 1), got {vf}")
    if int(data.get("stride", 1)) < 1:
        raise ConfigError("data.stride must be >= 1")
    return data


def parse_config(raw: dict, seed: int | None = None, mode: str | None = None,
                 variant: str | None = None, out_dir: str | None = None) -> RunConfig:
    """Validate a config dict; CLI overrides are folded in before hashing."""
    raw = copy.deepcopy(raw)
    _reject_unknown(raw, TOP_KEYS, "config")
    if seed is not None:
        raw["seed"] = int(seed)
    if mode is not None:
        raw["mode"] = mode
    if out_dir is not None:
        raw["out_dir"] = out_dir
    if variant is not None:
        raw.setdefault("model", {}).setdefault("attention", {})["variant"] = variant
    seed_val = int(raw.get("seed", 0))
    mode_val = raw.get("mode", "likelihood")
    if mode_val not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode_val!r}")
    data = _validate_data(copy.deepcopy(raw.get("data", {})))

    model_raw = dict(raw.get("model", {}))
    att_raw = dict(model_raw.pop("attention", {}))
    d_z = model_raw.get("d_z", ModelConfig.d_z)
    att_raw.setdefault("d_model", d_z)
    att_raw.setdefault("d_head", d_z)
    model_raw["attention"] = _build(AttentionConfig, att_raw, "model.attention")
    model_raw.setdefault("seed", seed_val)
    model = _build(ModelConfig, model_raw, "model")

    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", seed_val)
    train = _build(TrainConfig, train_raw, "train")

    adv_raw = dict(raw.get("adversarial", {}))
    adv_raw.setdefault("seed", seed_val)
    adversarial = _build(AdversarialConfig, adv_raw, "adversarial")

    risk_raw = dict(raw.get("risk", {}))
    tau_q = risk_raw.get("tau_quantile", 0.9 if "tau" not in risk_raw else None)
    if tau_q is not None and not 0 < tau_q < 1:
        raise ConfigError(f"risk.tau_quantile must lie in (0, 1), got {tau_q}")
    risk = _build(RiskPolicy, risk_raw, "risk", drop=RISK_EXTRA)

    forecast = {"samples": 500, "gate_override": None, "out_gate_override": None}
    fc_raw = raw.get("forecast", {})
    _reject_unknown(fc_raw, FORECAST_KEYS, "forecast")
    forecast.update(fc_raw)
    if int(forecast["samples"]) < 1:
        raise ConfigError("forecast.samples must be >= 1")

    evaluate = {"season": 24, "shock_label": 1, "point": "mean"}
    ev_raw = raw.get("evaluate", {})
    _reject_unknown(ev_raw, EVALUATE_KEYS, "evaluate")
    evaluate.update(ev_raw)
    if evaluate["point"] not in ("mean", "median"):
        raise ConfigError("evaluate.point must be 'mean' or 'median'")

    return RunConfig(seed_val, raw.get("out_dir", "runs/default"), mode_val, data, model, train,
                     adversarial, risk, tau_q, forecast, evaluate, raw)


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    return parse_config(raw, **overrides)
