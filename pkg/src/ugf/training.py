"""Likelihood + calibration + gate-smoothness objective and the training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import WindowBatch
from .errors import ConfigError, ContractError, EmptyInputError, NumericalAbort
from .model import UGGenerator
from .rng import RngStream

log = logging.getLogger(__name__)

ADAPTIVE_MODES = ("off", "gate", "weight_decay")
TERMS = ("nll", "cal", "gate", "reg")


@dataclass
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 0.01
    lambda0: float = 1.0
    adaptive: str = "gate"  # where the gate-driven weight is applied
    weight_decay: float = 1e-4  # only used when adaptive == "weight_decay"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    min_delta: float = 1e-6
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda0", "weight_decay", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.adaptive not in ADAPTIVE_MODES:
            raise ConfigError(f"adaptive must be one of {ADAPTIVE_MODES}, got {self.adaptive!r}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------
def nll_loss(y, mu_y, sigma_y) -> Tensor:
    """Gaussian NLL without the log(2*pi)/2 constant: mean over windows, sum over steps and dims."""
    y, mu_y, sigma_y = ad.as_tensor(y), ad.as_tensor(mu_y), ad.as_tensor(sigma_y)
    if not (y.shape == mu_y.shape == sigma_y.shape):
        raise ContractError(f"shape mismatch: y {y.shape}, mu {mu_y.shape}, sigma {sigma_y.shape}")
    if np.any(sigma_y.data <= 0):
        raise ContractError("sigma_y must be strictly positive")
    r = (y - mu_y) / sigma_y
    per_point = 0.5 * r * r + ad.log(sigma_y)
    n = y.shape[0] if y.ndim else 1
    return ad.tsum(per_point) * (1.0 / n)


def calibration_loss(y, mu_y, sigma_y) -> Tensor:
    """``(1 - Corr(|y - mu|, sigma))**2`` over all flattened elements."""
    y, mu_y, sigma_y = ad.as_tensor(y), ad.as_tensor(mu_y), ad.as_tensor(sigma_y)
    if y.size < 2:
        raise ContractError("calibration loss needs at least 2 elements")
    corr = ad.pearson_correlation(ad.tabs(y - mu_y), sigma_y)
    one_minus = 1.0 - corr
    return one_minus * one_minus


def gate_smoothness_loss(gates, weights=None) -> Tensor:
    """Sum over time of squared first differences, averaged over windows.

    ``gates`` is (N, T) or (N, T, d); differences are taken along axis 1 and
    squared norms taken over any trailing axes. ``weights`` (N,) optionally
    reweights each window.
    """
    g = ad.as_tensor(gates)
    if g.ndim < 2:
        raise ContractError(f"gates must be at least (N, T), got {g.shape}")
    n, T = g.shape[0], g.shape[1]
    if T < 2:
        return ad.Tensor(0.0)
    d = g[:, 1:] - g[:, :-1]
    per_window = ad.tsum(ad.reshape(d * d, (n, -1)), axis=1)
    if weights is not None:
        per_window = per_window * weights
    return ad.tmean(per_window)


def _param_sq_norm(params) -> Tensor:
    total = None
    for p in params:
        t = ad.tsum(p * p)
        total = t if total is None else total + t
    return total if total is not None else ad.Tensor(0.0)


def total_loss(batch: WindowBatch, model: UGGenerator, cfg: TrainConfig, rng: RngStream):
    """Run the forward pass and combine the terms.

    Returns ``(loss, parts, result)`` where ``parts`` maps term name to float
    and holds ``total``; ``total == nll + l1*cal + l2*gate + reg``.
    """
    res = model.forward(batch.contexts, rng, lambda0=cfg.lambda0)
    out = res.output
    y = ad.Tensor(batch.targets)
    nll = nll_loss(y, out.mu_y, out.sigma_y)
    cal = calibration_loss(y, out.mu_y, out.sigma_y)
    weights = None
    if cfg.adaptive == "gate":
        weights = 1.0 - res.gate.summary  # lambda_t / lambda0
    gate = gate_smoothness_loss(res.gate.gate, weights)
    if cfg.adaptive == "weight_decay":
        lam = ad.tmean(1.0 - res.gate.summary) * cfg.lambda0
        reg = lam * _param_sq_norm(model.parameters()) * cfg.weight_decay
    else:
        reg = ad.Tensor(0.0)
    loss = nll + cfg.lambda1 * cal + cfg.lambda2 * gate + reg
    parts = {"nll": nll.item(), "cal": cal.item(), "gate": gate.item(), "reg": reg.item(),
             "total": loss.item()}
    return loss, parts, res


def _first_nonfinite(parts: dict) -> str | None:
    for k in TERMS + ("total",):
        if not math.isfinite(parts[k]):
            return k
    return None


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------
class Adam:
    """Adaptive moment estimation with bias-corrected moments."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------
@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    start_epoch: int = 0
    stopped_epoch: int = 0
    best_epoch: int | None = None
    best_val_total: float | None = None
    lambda1: float = 0.0
    lambda2: float = 0.0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _average(acc: dict, count: int) -> dict:
    return {k: v / count for k, v in acc.items()}


def evaluate_loss(model: UGGenerator, batch: WindowBatch, cfg: TrainConfig, rng: RngStream) -> tuple[dict, np.ndarray]:
    """Loss decomposition on ``batch`` without recording a graph; also returns gate summaries."""
    acc = dict.fromkeys(TERMS + ("total",), 0.0)
    summaries = []
    with ad.no_grad():
        for b in batch.batches(max(cfg.batch_size, 1)):
            _, parts, res = total_loss(b, model, cfg, rng)
            for k in acc:
                acc[k] += parts[k] * len(b)
            summaries.append(res.gate.summary.data)
    avg = _average(acc, len(batch))
    # recombine so the identity holds exactly on the reported averages
    avg["total"] = avg["nll"] + cfg.lambda1 * avg["cal"] + cfg.lambda2 * avg["gate"] + avg["reg"]
    return avg, np.concatenate(summaries)


def fit(
    model: UGGenerator,
    train: WindowBatch,
    val: WindowBatch,
    cfg: TrainConfig,
    start_epoch: int = 0,
) -> TrainReport:
    """Adam on the combined objective with early stopping on validation total.

    The best-validation parameters are restored before returning. Epoch
    numbers continue from ``start_epoch`` when resuming.
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptyInputError("fit needs non-empty training and validation windows")
    t0 = time.perf_counter()
    report = TrainReport(start_epoch=start_epoch, stopped_epoch=start_epoch,
                         lambda1=cfg.lambda1, lambda2=cfg.lambda2)
    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    base = RngStream(cfg.seed)
    best_state, best_val, wait = None, math.inf, 0
    for i in range(cfg.max_epochs):
        epoch = start_epoch + i + 1
        rng = base.spawn(epoch)
        order = rng.permutation(len(train)) if cfg.shuffle else None
        acc = dict.fromkeys(TERMS + ("total",), 0.0)
        for b in train.batches(cfg.batch_size, order):
            opt.zero_grad()
            loss, parts, _ = total_loss(b, model, cfg, rng)
            bad = _first_nonfinite(parts)
            if bad is not None:
                raise NumericalAbort(f"epoch {epoch}: non-finite {bad} term ({parts[bad]!r})")
            ad.backward(loss)
            opt.step()
            for k in acc:
                acc[k] += parts[k] * len(b)
        train_parts = _average(acc, len(train))
        train_parts["total"] = (train_parts["nll"] + cfg.lambda1 * train_parts["cal"]
                                + cfg.lambda2 * train_parts["gate"] + train_parts["reg"])
        val_parts, summaries = evaluate_loss(model, val, cfg, base.spawn(0))
        bad = _first_nonfinite(val_parts)
        if bad is not None:
            raise NumericalAbort(f"epoch {epoch}: non-finite validation {bad} term")
        report.epochs.append({
            "epoch": epoch,
            "train": train_parts,
            "val": val_parts,
            "gate": {"mean": float(summaries.mean()), "std": float(summaries.std()),
                     "min": float(summaries.min()), "max": float(summaries.max())},
        })
        report.stopped_epoch = epoch
        log.debug("epoch %d train %.6f val %.6f", epoch, train_parts["total"], val_parts["total"])
        if val_parts["total"] < best_val - cfg.min_delta:
            best_val, wait = val_parts["total"], 0
            best_state = model.state_dict()
            report.best_epoch, report.best_val_total = epoch, best_val
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    report.wall_time = time.perf_counter() - t0
    return report
