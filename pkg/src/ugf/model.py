"""Uncertainty-gated generator: convolutional probabilistic encoder, gated
latent sampling, confidence-gated attention over the context positions and a
diagonal-Gaussian decoder for the H-step target."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, UGAttention
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError
from .gate import (
    GateNetwork,
    GateState,
    adaptive_lambda,
    gated_reparameterize,
    noise_scale,
    uncertainty_features,
)
from .nn import Linear, Module
from .rng import RngStream

LOG_VAR_CLAMP = 10.0
CHECKPOINT_VERSION = 1
DEFAULT_SAMPLES = 500


@dataclass
class ModelConfig:
    L: int = 8
    H: int = 2
    D: int = 1
    d_hidden: int = 8
    d_z: int = 4
    kernel_sizes: tuple[int, ...] = (3,)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    gate_hidden: int = 0  # psi_eta hidden width; 0 means identity
    gate_d_u: int | None = None
    dec_hidden: int = 8
    tie_output_gate: bool = True
    model_unc_passes: int = 8
    latent_scale: str = "log_var"  # or "softplus"
    force_gate: float | None = None  # ablation: fixed latent gate
    force_out_gate: float | None = None  # ablation: fixed output gate
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.attention, dict):
            self.attention = AttentionConfig(**self.attention)
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        widths = (self.L, self.H, self.D, self.d_hidden, self.d_z, self.dec_hidden)
        if min(widths) < 1:
            raise ConfigError(f"all model widths must be positive, got {widths}")
        if not self.kernel_sizes or any(k < 1 or k > self.L for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must lie in [1, L={self.L}], got {self.kernel_sizes}")
        if self.attention.d_model != self.d_z:
            raise ConfigError(
                f"attention.d_model ({self.attention.d_model}) must equal d_z ({self.d_z})"
            )
        if self.model_unc_passes < 2:
            raise ConfigError("model_unc_passes must be >= 2 to estimate a spread")
        for name in ("force_gate", "force_out_gate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.latent_scale not in ("log_var", "softplus"):
            raise ConfigError(f"latent_scale must be 'log_var' or 'softplus', got {self.latent_scale!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


@dataclass
class EncodedState:
    h: Tensor  # (N, L, d_hidden)
    mu: Tensor  # (N, L, d_z)
    log_var: Tensor  # (N, L, d_z)
    sigma: Tensor  # (N, L, d_z)


@dataclass
class PredictiveOutput:
    mu_y: Tensor  # (N, H, D)
    sigma_y: Tensor  # (N, H, D)
    gate_out: Tensor  # (N,)
    samples: np.ndarray | None = None  # (S, N, H, D)


@dataclass
class ForwardResult:
    encoded: EncodedState
    gate: GateState
    attended: Tensor  # (N, L, d_out)
    output: PredictiveOutput


def _constant_gate(value, shape) -> Tensor:
    return ad.Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), shape).copy())


class UGGenerator(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = RngStream(cfg.seed)
        self.conv_W: list[Parameter] = []
        self.conv_b: list[Parameter] = []
        c_in = cfg.D
        for i, k in enumerate(cfg.kernel_sizes):
            self.conv_W.append(Parameter(rng.normal((k, c_in, cfg.d_hidden)) / np.sqrt(k * c_in), f"enc.conv{i}.W"))
            self.conv_b.append(Parameter(np.zeros(cfg.d_hidden), f"enc.conv{i}.b"))
            c_in = cfg.d_hidden
        self.head_mu = Linear(cfg.d_hidden, cfg.d_z, rng, "enc.mu")
        self.head_sigma = Linear(cfg.d_hidden, cfg.d_z, rng, "enc.log_var")
        self.attn = UGAttention(cfg.attention, rng, "attn")
        d_out = self.attn.d_out
        self.gate_net = GateNetwork(cfg.d_z + d_out, cfg.d_z, rng, hidden=cfg.gate_hidden,
                                    d_u=cfg.gate_d_u, name="gate")
        self.dec_hidden = Linear(d_out, cfg.dec_hidden, rng, "dec.hidden")
        self.dec_mu = Linear(cfg.dec_hidden, cfg.H * cfg.D, rng, "dec.mu")
        self.dec_log_var = Linear(cfg.dec_hidden, cfg.H * cfg.D, rng, "dec.log_var")
        self.out_gate = None if cfg.tie_output_gate else Linear(d_out, 1, rng, "dec.out_gate")

    # -- parameter bookkeeping -------------------------------------------
    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    # -- encoder -----------------------------------------------------------
    def _check_input(self, x) -> Tensor:
        x = ad.as_tensor(x)
        c = self.cfg
        if x.ndim != 3 or x.shape[1:] != (c.L, c.D):
            raise ContractError(f"expected input of shape (N, L={c.L}, D={c.D}), got {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise ContractError("input contains non-finite values")
        return x

    def encode(self, x) -> EncodedState:
        """Causal temporal convolutions, then per-position mean and log-variance heads."""
        x = self._check_input(x)
        h = x
        L = self.cfg.L
        for W, b, k in zip(self.conv_W, self.conv_b, self.cfg.kernel_sizes):
            hp = ad.pad(h, ((0, 0), (k - 1, 0), (0, 0)))
            acc = None
            for j in range(k):
                term = ad.matmul(hp[:, j:j + L, :], W[j])
                acc = term if acc is None else acc + term
            h = ad.softplus(acc + b)
        mu = self.head_mu(h)
        raw = self.head_sigma(h)
        if self.cfg.latent_scale == "softplus":
            sigma = noise_scale(raw)
            log_var = 2.0 * ad.log(sigma)
        else:
            log_var = ad.clip(raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
            sigma = ad.exp(log_var * 0.5)
        return EncodedState(h, mu, log_var, sigma)

    # -- pieces of the forward pass ----------------------------------------
    def model_uncertainty(self, enc: EncodedState, conf: Tensor, rng: RngStream) -> Tensor:
        """Spread of the attended latent over K stochastic passes with the gate open."""
        K = self.cfg.model_unc_passes
        eps = rng.normal((K,) + enc.mu.shape)
        z = enc.mu + enc.sigma * ad.Tensor(eps)
        att = self.attn(z, conf)
        dev = att - ad.tmean(att, axis=0, keepdims=True)
        return ad.sqrt(ad.tmean(dev * dev, axis=0) + 1e-12)

    def decode(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        c = self.cfg
        hid = ad.softplus(self.dec_hidden(pooled))
        n = pooled.shape[0]
        mu_y = ad.reshape(self.dec_mu(hid), (n, c.H, c.D))
        log_var = ad.clip(self.dec_log_var(hid), -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
        sigma_y = ad.reshape(ad.exp(log_var * 0.5), (n, c.H, c.D))
        return mu_y, sigma_y

    def forward(
        self,
        x,
        rng: RngStream,
        gate_override=None,
        out_gate_override=None,
        alpha=None,
        lambda0: float = 1.0,
    ) -> ForwardResult:
        """Full gated pass.

        ``gate_override`` fixes the latent gate (the uncertainty branch is then
        skipped entirely, so no noise is drawn for it); ``out_gate_override``
        fixes the output-side gate used for sampling.
        """
        if gate_override is None:
            gate_override = self.cfg.force_gate
        if out_gate_override is None:
            out_gate_override = self.cfg.force_out_gate
        enc = self.encode(x)
        n = enc.mu.shape[0]
        conf = ad.tmean(enc.sigma, axis=-1)  # per-position confidence input
        if gate_override is None:
            model_unc = self.model_uncertainty(enc, conf, rng)
            feats = uncertainty_features(enc.sigma, model_unc)
            u = self.gate_net.features(feats)
            gate = self.gate_net(u)
        else:
            gate = _constant_gate(gate_override, enc.mu.shape)
            u = ad.Tensor(np.zeros(enc.mu.shape[:-1] + (0,)))
        summary = ad.tmean(ad.reshape(gate, (n, -1)), axis=-1)
        decision_var = np.var(gate.data.reshape(n, -1), axis=-1)
        z = gated_reparameterize(enc.mu, enc.sigma, gate, eps=rng.normal(enc.mu.shape))
        attended = self.attn(z, conf, alpha)
        pooled = ad.tmean(attended, axis=1)
        mu_y, sigma_y = self.decode(pooled)
        if out_gate_override is not None:
            g_out = ad.Tensor(np.broadcast_to(np.asarray(out_gate_override, float), (n,)).copy())
        elif self.out_gate is None:
            g_out = summary
        else:
            g_out = ad.reshape(ad.sigmoid(self.out_gate(pooled)), (n,))
        gstate = GateState(u, gate, summary, adaptive_lambda(summary.data, lambda0), decision_var)
        return ForwardResult(enc, gstate, attended, PredictiveOutput(mu_y, sigma_y, g_out))

    __call__ = forward

    def predict(self, x, rng: RngStream, S: int = DEFAULT_SAMPLES, **overrides) -> ForwardResult:
        """Inference pass plus ``S`` predictive samples (no graph recorded)."""
        with ad.no_grad():
            res = self.forward(x, rng, **overrides)
            res.output.samples = sample_predictive(res.output, res.output.gate_out, rng, S).data
        return res


def sample_predictive(out: PredictiveOutput, g_prime, rng: RngStream, S: int = DEFAULT_SAMPLES) -> Tensor:
    """``S`` draws of ``mu_y + g' * sigma_y * eps'``; differentiable in mu, sigma, g'."""
    if S < 1:
        raise ContractError(f"sample count must be >= 1, got {S}")
    g = ad.as_tensor(g_prime)
    if np.any(g.data < 0) or np.any(g.data > 1):
        raise ContractError("output gate must lie in [0, 1]")
    mu, sigma = out.mu_y, out.sigma_y
    if g.ndim == 1 and g.shape[0] == mu.shape[0] and mu.ndim > 1:
        g = ad.reshape(g, (g.shape[0],) + (1,) * (mu.ndim - 1))
    eps = rng.normal((S,) + tuple(mu.shape))
    return mu + g * sigma * ad.Tensor(eps)


def point_forecast(samples) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise mean and median over the leading sample axis."""
    s = np.asarray(samples.data if isinstance(samples, Tensor) else samples, dtype=np.float64)
    if s.shape[0] < 1:
        raise ContractError("need at least one sample")
    return s.mean(axis=0), np.median(s, axis=0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(path, model: UGGenerator, extra: dict | None = None) -> None:
    """npz container: one float64 array per parameter plus a JSON header."""
    params = model.parameters()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "parameters": [{"id": p.name, "shape": list(p.shape)} for p in params],
        "extra": extra or {},
    }
    arrays = {f"p::{p.name}": np.ascontiguousarray(p.data, dtype=np.float64) for p in params}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path) -> tuple[UGGenerator, dict]:
    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ContractError(
                f"unsupported checkpoint version {meta.get('format_version')} (expected {CHECKPOINT_VERSION})"
            )
        model = UGGenerator(ModelConfig(**meta["config"]))
        state = {e["id"]: npz[f"p::{e['id']}"] for e in meta["parameters"]}
    model.load_state_dict(state)
    return model, meta["extra"]
