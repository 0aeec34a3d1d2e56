"""Confidence-gated scaled dot-product attention.

Three score variants share one projection module:

* ``additive_log``   softmax(QK^T/sqrt(d) + log G)
* ``multiplicative`` softmax((QK^T/sqrt(d)) * G)
* ``vanilla``        softmax(QK^T/sqrt(d))

with ``G_ij = exp(-alpha * (sigma_i + sigma_j))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError
from .nn import Module
from .rng import RngStream

VARIANTS = ("additive_log", "multiplicative", "vanilla")


@dataclass
class AttentionConfig:
    d_model: int = 4
    d_head: int = 4
    alpha: float = 1.0
    variant: str = "additive_log"
    n_heads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}; expected one of {VARIANTS}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if min(self.d_model, self.d_head, self.n_heads) < 1:
            raise ConfigError("attention widths and head count must be positive")


def _check_sigmas(*sigmas: Tensor) -> None:
    for s in sigmas:
        if np.any(s.data < 0):
            raise ContractError("confidence sigmas must be >= 0")


def log_confidence_gate(sigma_q, sigma_k, alpha) -> Tensor:
    """``-alpha * (sigma_q[i] + sigma_k[j])``, computed without exp/log round trip."""
    sigma_q, sigma_k = ad.as_tensor(sigma_q), ad.as_tensor(sigma_k)
    _check_sigmas(sigma_q, sigma_k)
    pair = ad.reshape(sigma_q, sigma_q.shape + (1,)) + ad.reshape(sigma_k, sigma_k.shape[:-1] + (1, sigma_k.shape[-1]))
    return -(ad.as_tensor(alpha) * pair)


def confidence_gate(sigma_q, sigma_k, alpha) -> Tensor:
    """``G_ij = exp(-alpha * (sigma_q[i] + sigma_k[j]))`` in (0, 1]."""
    return ad.exp(log_confidence_gate(sigma_q, sigma_k, alpha))


def weights_from_scores(S: Tensor, sigmas, alpha, variant: str) -> Tensor:
    """Row-stochastic attention matrix from raw similarity scores."""
    if variant == "vanilla":
        return ad.softmax(S, axis=-1)
    if sigmas is None:
        raise ConfigError(f"attention variant {variant!r} needs per-position sigmas")
    sigmas = ad.as_tensor(sigmas)
    if variant == "additive_log":
        return ad.softmax(S + log_confidence_gate(sigmas, sigmas, alpha), axis=-1)
    if variant == "multiplicative":
        return ad.softmax(S * confidence_gate(sigmas, sigmas, alpha), axis=-1)
    raise ConfigError(f"unknown attention variant {variant!r}")


class UGAttention(Module):
    """Single- or multi-head attention; every head uses the same confidence gate."""

    def __init__(self, cfg: AttentionConfig, rng: RngStream, name: str = "attn"):
        self.cfg = cfg
        scale = 1.0 / math.sqrt(cfg.d_model)
        shape = (cfg.d_model, cfg.d_head)
        self.W_q = [Parameter(rng.normal(shape) * scale, f"{name}.h{h}.W_q") for h in range(cfg.n_heads)]
        self.W_k = [Parameter(rng.normal(shape) * scale, f"{name}.h{h}.W_k") for h in range(cfg.n_heads)]
        self.W_v = [Parameter(rng.normal(shape) * scale, f"{name}.h{h}.W_v") for h in range(cfg.n_heads)]

    @property
    def d_out(self) -> int:
        return self.cfg.d_head * self.cfg.n_heads

    def _alpha(self, alpha):
        return self.cfg.alpha if alpha is None else alpha

    def head_weights(self, z, sigmas, alpha=None) -> list[Tensor]:
        z = ad.as_tensor(z)
        out = []
        for Wq, Wk in zip(self.W_q, self.W_k):
            q = ad.matmul(z, Wq)
            k = ad.matmul(z, Wk)
            S = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.cfg.d_head))
            out.append(weights_from_scores(S, sigmas, self._alpha(alpha), self.cfg.variant))
        return out

    def __call__(self, z, sigmas=None, alpha=None) -> Tensor:
        z = ad.as_tensor(z)
        heads = [ad.matmul(A, ad.matmul(z, Wv))
                 for A, Wv in zip(self.head_weights(z, sigmas, alpha), self.W_v)]
        return heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)


def attention_weights(z, sigmas, attn: UGAttention, alpha=None) -> Tensor:
    """The attention matrix (first head) used by ``ug_attention_forward``."""
    return attn.head_weights(z, sigmas, alpha)[0]


def ug_attention_forward(z, sigmas, attn: UGAttention, alpha=None) -> Tensor:
    return attn(z, sigmas, alpha)
