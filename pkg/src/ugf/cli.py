"""Command line entry point: simulate | train | forecast | evaluate | gradcheck.

Exit codes: 0 success, 1 contract or configuration error, 2 numerical abort
(including a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, load_config, parse_config
from .data import TimeSeries, load_csv_series, parse_timestamp, write_csv_series
from .errors import ConfigError, ContractError, NumericalAbort, UGFError
from .metrics import compute_report, format_table1_row, shock_slice
from .model import UGGenerator, load_checkpoint, save_checkpoint
from .pipeline import forecast_windows, generate_synthetic, prepare_from_config, risk_scores
from .risk import calibrate_tau
from .rng import RngStream
from .selfcheck import run_gradcheck, tiny_model_config
from .training import fit
from .wiae import fit_adversarial

log = logging.getLogger("ugf")

FORECAST_SCHEMA = "ugf.forecast/1"
REPORT_SCHEMA = "ugf.report/1"
TRAIN_SCHEMA = "ugf.train/1"


def _setup_logging() -> None:
    level = os.environ.get("UGF_LOG_LEVEL", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"UGF_LOG_LEVEL must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ContractError(f"output directory {out} is not writable ({exc})") from exc
    return out


def _audit(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, "version": __version__}


def _audit_line(cfg: RunConfig) -> str:
    return f"config_hash={cfg.hash} seed={cfg.seed}"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------
def cmd_simulate(cfg: RunConfig) -> dict:
    if cfg.data.get("source") == "csv" or "synthetic" not in cfg.data:
        raise ConfigError("simulate needs data.source = 'synthetic'")
    spec = cfg.data["synthetic"]
    series, aux = generate_synthetic(spec, cfg.seed)
    out = _out_dir(cfg)
    write_csv_series(out / "series.csv", series, comment=_audit_line(cfg))
    aux_name = "regime" if spec["kind"] == "regime_ar" else "sigma"
    write_csv_series(out / "labels.csv", series, {aux_name: aux}, comment=_audit_line(cfg), include_values=False)
    manifest = {**_audit(cfg), "kind": spec["kind"], "T": len(series),
                "files": {"series": "series.csv", "labels": "labels.csv"}, "label_column": aux_name}
    write_json(out / "manifest.json", manifest)
    log.info("wrote %d steps to %s", len(series), out)
    return manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def cmd_train(cfg: RunConfig, checkpoint: str | None = None) -> dict:
    data = prepare_from_config(cfg)
    start_epoch = 0
    if checkpoint:
        model, extra = load_checkpoint(checkpoint)
        start_epoch = int(extra.get("epoch", 0))
        if model.cfg.to_dict() != {**cfg.model.to_dict()}:
            log.info("resuming with the checkpoint's model configuration")
    else:
        model = UGGenerator(cfg.model)
    out = _out_dir(cfg)
    result: dict = {"schema": TRAIN_SCHEMA, **_audit(cfg), "mode": cfg.mode, "start_epoch": start_epoch}
    if cfg.mode == "likelihood":
        report = fit(model, data.train, data.val, cfg.train, start_epoch=start_epoch)
        result["report"] = report.to_dict()
        end_epoch = report.stopped_epoch
    else:
        lik = cfg.train if cfg.mode == "combined" else None
        _, rows = fit_adversarial(model, data.train, cfg.adversarial, cfg.train.max_epochs,
                                  cfg.train.batch_size, likelihood=lik, start_epoch=start_epoch)
        result["adversarial_steps"] = rows
        end_epoch = start_epoch + cfg.train.max_epochs
    tau = cfg.risk.tau
    if cfg.tau_quantile is not None:
        scores = risk_scores(model, data.val.contexts, data.standardizer, cfg.risk, RngStream(cfg.seed).spawn(7))
        tau = calibrate_tau(scores, cfg.tau_quantile)
    result["tau"] = tau
    result["end_epoch"] = end_epoch
    extra = {**_audit(cfg), "epoch": end_epoch, "mode": cfg.mode, "tau": tau,
             "standardizer": data.standardizer.to_dict(), "boundary": data.boundary}
    save_checkpoint(out / "checkpoint.npz", model, extra)
    write_json(out / "train_report.json", result)
    return result


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------
def _read_window_file(path: str, L: int, D: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    series = load_csv_series(path, None, "timestamp")
    if series.dim != D or len(series) < L:
        raise ContractError(
            f"{path}: window has {len(series)} rows x {series.dim} value columns; expected at least L={L} rows and D={D}"
        )
    origins = np.arange(L - 1, len(series))
    ctx = series.values[origins[:, None] + np.arange(-L + 1, 1)[None, :]]
    step = int(series.timestamps[-1] - series.timestamps[-2]) if len(series) > 1 else 1
    return ctx, series.timestamps[origins], step


def cmd_forecast(cfg: RunConfig, checkpoint: str, input_path: str | None = None) -> dict:
    from .data import Standardizer

    model, extra = load_checkpoint(checkpoint)
    st = Standardizer.from_dict(extra["standardizer"])
    mc = model.cfg
    policy = cfg.risk
    if extra.get("tau") is not None and cfg.tau_quantile is not None:
        from dataclasses import replace
        policy = replace(policy, tau=float(extra["tau"]))
    if input_path:
        contexts, origin_ts, step = _read_window_file(input_path, mc.L, mc.D)
        target_ts = origin_ts[:, None] + step * np.arange(1, mc.H + 1)[None, :]
    else:
        data = prepare_from_config(cfg)
        contexts = st.invert(data.test.contexts)
        target_ts = data.test.target_timestamps
        origin_ts = data.series.timestamps[data.test.origin_indices]
    fc = cfg.forecast
    rows = forecast_windows(model, contexts, st, policy, RngStream(cfg.seed).spawn(11),
                            S=int(fc["samples"]), gate_override=fc.get("gate_override"),
                            out_gate_override=fc.get("out_gate_override"))
    out = _out_dir(cfg)
    samples = {f"w{i}": r.pop("samples") for i, r in enumerate(rows)}
    for i, r in enumerate(rows):
        r["origin_timestamp"] = int(origin_ts[i])
        r["target_timestamps"] = target_ts[i]
        r["n_samples"] = int(samples[f"w{i}"].shape[0])
    with open(out / "forecast_samples.npz", "wb") as fh:
        np.savez(fh, **samples)
    doc = {"schema": FORECAST_SCHEMA, **_audit(cfg), "checkpoint_config_hash": extra.get("config_hash"),
           "L": mc.L, "H": mc.H, "D": mc.D, "policy": policy.__dict__, "samples_file": "forecast_samples.npz",
           "windows": rows}
    write_json(out / "forecast.json", doc)
    return doc


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------
def _write_rows(path: Path, header: list[str], rows, comment: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_evaluate(cfg: RunConfig, forecast_paths: list[str], truth_path: str, labels_path: str | None = None) -> dict:
    truth = load_csv_series(truth_path, None, "timestamp")
    index = {int(t): i for i, t in enumerate(truth.timestamps)}
    point_key = cfg.evaluate["point"]
    ys, yhats, sigmas, stamps, hs, gates, origins = [], [], [], [], [], [], []
    for fpath in forecast_paths:
        doc = json.loads(Path(fpath).read_text(encoding="utf-8"))
        if doc.get("schema") != FORECAST_SCHEMA:
            raise ContractError(f"{fpath}: not a forecast file (schema {doc.get('schema')!r})")
        for w_i, w in enumerate(doc["windows"]):
            pred = np.asarray(w[point_key], dtype=np.float64)
            sig = np.asarray(w["sigma_post"], dtype=np.float64)
            for h, ts in enumerate(w["target_timestamps"]):
                if int(ts) not in index:
                    raise ContractError(
                        f"{fpath}: window {w_i} step {h} target timestamp {ts} not in truth file"
                    )
                ys.append(truth.values[index[int(ts)]])
                yhats.append(pred[h])
                sigmas.append(sig[h])
                stamps.append(int(ts))
                hs.append(h + 1)
            gates.append(w["gate_out"])
            origins.append(w["origin_timestamp"])
    if not ys:
        raise ContractError("no forecast points to evaluate")
    y, yhat, sig = np.array(ys), np.array(yhats), np.array(sigmas)
    first = min(stamps)
    insample = truth.values[truth.timestamps < first]
    season = int(cfg.evaluate["season"])
    horizon = max(hs)
    report = compute_report(y, yhat, insample, season, horizon=horizon, split="test")
    if labels_path:
        lab = load_csv_series(labels_path, None, "timestamp")
        lab_index = {int(t): i for i, t in enumerate(lab.timestamps)}
        missing = [s for s in stamps if s not in lab_index]
        if missing:
            raise ContractError(f"labels file lacks target timestamp {missing[0]}")
        labels = np.array([lab.values[lab_index[s], 0] for s in stamps])
        labels = np.broadcast_to(labels[:, None], y.shape)
        report.shock = shock_slice(y, yhat, insample, labels, cfg.evaluate["shock_label"], season, horizon)
    out = _out_dir(cfg)
    audit = _audit_line(cfg)
    err = (y - yhat).reshape(len(y), -1)
    _write_rows(out / "errors.csv", ["timestamp", "h", "dim", "y", "yhat", "error"],
                [(stamps[i], hs[i], d, repr(float(y.reshape(len(y), -1)[i, d])), repr(float(yhat.reshape(len(y), -1)[i, d])),
                  repr(float(err[i, d]))) for i in range(len(y)) for d in range(err.shape[1])], audit)
    _write_rows(out / "calibration.csv", ["sigma", "abs_error"],
                [(repr(float(s)), repr(float(abs(e)))) for s, e in zip(sig.reshape(-1), err.reshape(-1))], audit)
    _write_rows(out / "gate_trace.csv", ["origin_timestamp", "gate_out"],
                [(o, repr(float(g))) for o, g in zip(origins, gates)], audit)
    doc = {"schema": REPORT_SCHEMA, **_audit(cfg), "point": point_key, "report": report.to_dict(),
           "table1_row": format_table1_row(report)}
    write_json(out / "metrics.json", doc)
    (out / "table1.txt").write_text(f"# {audit}\n{format_table1_row(report, 'UG model')}\n", encoding="utf-8")
    return doc


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------
def cmd_gradcheck(cfg: RunConfig, corrupt_param: str | None = None, n_seeds: int = 20) -> dict:
    model_cfg = tiny_model_config(seed=cfg.seed)
    report = run_gradcheck(seeds=range(cfg.seed, cfg.seed + n_seeds), model_cfg=model_cfg,
                           train_cfg=cfg.train, corrupt_param=corrupt_param)
    out = _out_dir(cfg)
    doc = {**_audit(cfg), **report.to_dict()}
    write_json(out / "gradcheck.json", doc)
    for name, err in report.max_rel_error.items():
        print(f"{name:24s} {err:.3e} {'ok' if err < report.tolerance else 'FAIL'}")
    return doc


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ugf", description="Uncertainty-gated probabilistic forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--mode", choices=("likelihood", "adversarial", "combined"))
        sp.add_argument("--variant", choices=("additive_log", "multiplicative", "vanilla"))
        return sp

    common(sub.add_parser("simulate", help="write a synthetic series and its label sidecar"))
    tr = common(sub.add_parser("train", help="fit a model and write a checkpoint"))
    tr.add_argument("--checkpoint", help="resume from this checkpoint")
    fc = common(sub.add_parser("forecast", help="forecast with risk routing"))
    fc.add_argument("--checkpoint", required=True)
    fc.add_argument("--input", help="window CSV with at least L rows (default: test windows of the data source)")
    ev = common(sub.add_parser("evaluate", help="metrics, shock slice and plot data"), need_config=False)
    ev.add_argument("--forecasts", nargs="+", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--labels")
    gc = common(sub.add_parser("gradcheck", help="finite-difference check of the full objective"), need_config=False)
    gc.add_argument("--seeds", type=int, default=20)
    gc.add_argument("--corrupt-param", help=argparse.SUPPRESS)
    return p


def _config(args) -> RunConfig:
    overrides = dict(seed=args.seed, mode=args.mode, variant=args.variant, out_dir=args.out)
    if args.config:
        return load_config(args.config, **overrides)
    return parse_config({}, **overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = _config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.checkpoint)
        elif args.command == "forecast":
            cmd_forecast(cfg, args.checkpoint, args.input)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.forecasts, args.truth, args.labels)
        elif args.command == "gradcheck":
            doc = cmd_gradcheck(cfg, args.corrupt_param, args.seeds)
            if not doc["passed"]:
                print(f"gradient check FAILED for {doc['failing']}", file=sys.stderr)
                return NumericalAbort.exit_code
    except UGFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
