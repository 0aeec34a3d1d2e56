"""Uncertainty features, the logistic gate, gated reparameterization and
the gate-driven adaptive regularization weight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ContractError
from .nn import MLP, Module
from .rng import RngStream

SCALE_FLOOR = 1e-6


@dataclass
class UncertaintyFeatures:
    data_unc: Tensor  # aleatoric proxy, >= 0
    model_unc: Tensor  # epistemic proxy, >= 0
    context: Tensor | None = None

    def concat(self) -> Tensor:
        parts = [self.data_unc, self.model_unc]
        if self.context is not None:
            parts.append(self.context)
        return ad.concat(parts, axis=-1)


@dataclass
class GateState:
    u: Tensor  # psi_eta output
    gate: Tensor  # elementwise gate in (0, 1)
    summary: Tensor  # per-sample mean of the gate
    lambda_t: np.ndarray  # per-sample adaptive weight
    decision_var: np.ndarray  # per-sample Var(gate) diagnostic, never fed back


def uncertainty_features(enc_sigma, model_unc, context=None) -> UncertaintyFeatures:
    """Bundle the uncertainty proxies, ordered [data, model, context]."""
    enc_sigma, model_unc = ad.as_tensor(enc_sigma), ad.as_tensor(model_unc)
    if enc_sigma.shape[:-1] != model_unc.shape[:-1]:
        raise ContractError(
            f"leading dimensions differ: {enc_sigma.shape} vs {model_unc.shape}"
        )
    if np.any(enc_sigma.data < 0) or np.any(model_unc.data < 0):
        raise ContractError("uncertainty proxies must be elementwise >= 0")
    ctx = None if context is None else ad.as_tensor(context)
    return UncertaintyFeatures(enc_sigma, model_unc, ctx)


def compute_gate(u, W_g, b_g) -> Tensor:
    """Elementwise ``sigmoid(u @ W_g + b_g)``."""
    return ad.sigmoid(ad.matmul(ad.as_tensor(u), W_g) + b_g)


def gated_reparameterize(mu, sigma, gate, rng: RngStream | None = None, eps=None) -> Tensor:
    """``z = mu + gate * sigma * eps`` with eps ~ N(0, I) held constant for AD.

    Pass ``eps`` to freeze noise explicitly; otherwise it is drawn from ``rng``.
    """
    mu, sigma, gate = ad.as_tensor(mu), ad.as_tensor(sigma), ad.as_tensor(gate)
    if np.any(sigma.data < 0):
        raise ContractError("sigma must be elementwise >= 0")
    shape = np.broadcast_shapes(mu.shape, sigma.shape, gate.shape)
    if eps is None:
        if rng is None:
            raise ContractError("gated_reparameterize needs rng or eps")
        eps = rng.normal(shape)
    return mu + gate * sigma * ad.Tensor(eps)


def adaptive_lambda(gate_summary, lambda0: float) -> np.ndarray:
    """``lambda0 * (1 - g)``: full weight when the gate is closed, none when open."""
    if lambda0 < 0:
        raise ContractError(f"lambda0 must be >= 0, got {lambda0}")
    g = np.asarray(gate_summary.data if isinstance(gate_summary, Tensor) else gate_summary, dtype=np.float64)
    if np.any(g < 0) or np.any(g > 1):
        raise ContractError("gate summary must lie in [0, 1]")
    return lambda0 * (1.0 - g)


def noise_scale(u) -> Tensor:
    """Positive scale from an unconstrained proxy: softplus floored at 1e-6."""
    return ad.maximum(ad.softplus(u), SCALE_FLOOR)


class GateNetwork(Module):
    """psi_eta (identity when ``hidden == 0``) followed by the logistic gate."""

    def __init__(self, d_in: int, d_gate: int, rng: RngStream, hidden: int = 0,
                 d_u: int | None = None, name: str = "gate"):
        self.psi = None
        d_u_eff = d_in
        if hidden > 0:
            d_u_eff = d_u if d_u is not None else hidden
            self.psi = MLP([d_in, hidden, d_u_eff], rng, f"{name}.psi")
        self.d_u = d_u_eff
        self.W_g = Parameter(rng.normal((d_u_eff, d_gate)) * (0.1 / np.sqrt(d_u_eff)), f"{name}.W_g")
        # start mostly open so early training behaves like the ungated model
        self.b_g = Parameter(np.full(d_gate, 2.0), f"{name}.b_g")

    def features(self, feats: UncertaintyFeatures) -> Tensor:
        x = feats.concat()
        return x if self.psi is None else self.psi(x)

    def __call__(self, u: Tensor) -> Tensor:
        return compute_gate(u, self.W_g, self.b_g)
