"""Risk score, threshold routing and the conservative inference actions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .rng import RngStream

RHO_KINDS = ("l2_norm", "max")
ACTIONS = ("inflate", "resample", "smooth")
STANDARD, ROBUST = "standard", "robust"


@dataclass
class RiskPolicy:
    rho_kind: str = "l2_norm"
    tau: float = 1.0
    kappa: float = 1.5
    S_std: int = 500
    S_rob: int = 2000
    beta: float = 0.3
    actions_enabled: tuple[str, ...] = ACTIONS

    def __post_init__(self):
        self.actions_enabled = tuple(self.actions_enabled)
        if self.rho_kind not in RHO_KINDS:
            raise ConfigError(f"rho_kind must be one of {RHO_KINDS}, got {self.rho_kind!r}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if not 1 <= self.S_std <= self.S_rob:
            raise ConfigError(f"need 1 <= S_std <= S_rob, got {self.S_std}, {self.S_rob}")
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        unknown = set(self.actions_enabled) - set(ACTIONS)
        if unknown:
            raise ConfigError(f"unknown actions {sorted(unknown)}")


@dataclass
class Forecast:
    """One window's predictive distribution in plain arrays, (H, D) each."""

    mu: np.ndarray
    sigma: np.ndarray
    gate_out: float = 1.0
    samples: np.ndarray | None = None  # (S, H, D)


def risk_score(sigma_y, policy: RiskPolicy) -> float:
    s = np.asarray(sigma_y, dtype=np.float64)
    if np.any(s <= 0):
        raise ContractError("sigma_y must be strictly positive")
    if policy.rho_kind == "l2_norm":
        return float(np.sqrt(np.sum(s * s)))
    return float(np.max(s))


def select_action(r: float, policy: RiskPolicy) -> str:
    """Standard when ``r <= tau`` (inclusive), robust otherwise."""
    return STANDARD if r <= policy.tau else ROBUST


def ema_smooth(mu: np.ndarray, anchor: np.ndarray, beta: float) -> np.ndarray:
    """``m_h = beta * m_{h-1} + (1 - beta) * mu_h`` along axis 0, seeded with ``anchor``.

    Written so that beta = 0 and a constant path equal to the anchor are both exact.
    """
    mu = np.asarray(mu, dtype=np.float64)
    out = np.empty_like(mu)
    prev = np.asarray(anchor, dtype=np.float64)
    for h in range(mu.shape[0]):
        prev = mu[h] + beta * (prev - mu[h])
        out[h] = prev
    return out


def draw_samples(mu, sigma, gate_out: float, rng: RngStream, S: int) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    return mu + gate_out * np.asarray(sigma) * rng.normal((S,) + mu.shape)


def apply_conservative_action(out: Forecast, last_observed, policy: RiskPolicy, rng: RngStream) -> Forecast:
    """Inflate, then smooth, then resample, each only if enabled."""
    mu, sigma, S = out.mu, out.sigma, policy.S_std
    if "inflate" in policy.actions_enabled:
        sigma = policy.kappa * sigma
    if "smooth" in policy.actions_enabled:
        last = np.asarray(last_observed, dtype=np.float64)
        if last.shape != mu.shape[1:]:
            raise ContractError(f"last_observed shape {last.shape} != {mu.shape[1:]}")
        mu = ema_smooth(mu, last, policy.beta)
    if "resample" in policy.actions_enabled:
        S = policy.S_rob
    return Forecast(mu, sigma, out.gate_out, draw_samples(mu, sigma, out.gate_out, rng, S))


@dataclass
class RoutedForecast:
    risk: float
    action: str
    forecast: Forecast


def route(out: Forecast, last_observed, policy: RiskPolicy, rng: RngStream) -> RoutedForecast:
    """Score, threshold and (on the robust branch) apply the conservative action."""
    r = risk_score(out.sigma, policy)
    action = select_action(r, policy)
    if action == ROBUST:
        fc = apply_conservative_action(out, last_observed, policy, rng)
    else:
        samples = out.samples
        if samples is None:
            samples = draw_samples(out.mu, out.sigma, out.gate_out, rng, policy.S_std)
        fc = Forecast(out.mu, out.sigma, out.gate_out, samples)
    return RoutedForecast(r, action, fc)


def calibrate_tau(scores, quantile: float = 0.9) -> float:
    """Threshold at the given quantile of validation risk scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("need at least one score to calibrate tau")
    return float(np.quantile(scores, quantile))


def interval_coverage(y, mu, sigma, z: float = 1.6448536269514722) -> float:
    """Fraction of ``y`` inside ``mu +/- z * sigma`` (default: central 90%)."""
    y, mu, sigma = (np.asarray(a, dtype=np.float64) for a in (y, mu, sigma))
    return float(np.mean(np.abs(y - mu) <= z * sigma))
