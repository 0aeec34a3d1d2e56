"""Dual-critic adversarial training for weak innovation autoencoding.

Two weight-clipped Wasserstein critics: one separates extracted innovations
from an i.i.d. uniform reference, the other separates true joint
trajectories from past-plus-generated ones. The generator minimizes
``gap_inn + lambda * gap_rec``; the critics maximize it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import WindowBatch
from .errors import ConfigError, ContractError, EmptyInputError, NumericalAbort
from .model import EncodedState, UGGenerator, sample_predictive
from .nn import Linear, Module
from .rng import RngStream
from .training import Adam, TrainConfig, total_loss

LEAK = 0.2


@dataclass
class AdversarialConfig:
    lambda_balance: float = 1.0
    n_critic: int = 5
    clip_bound: float = 0.01
    critic_lr: float = 5e-5
    generator_lr: float = 1e-4
    critic_hidden: int = 64
    likelihood_weight: float = 1.0  # weight of the likelihood objective in combined mode
    T_forecast: int | None = None  # defaults to the model horizon
    seed: int = 0

    def __post_init__(self):
        if self.n_critic < 1:
            raise ConfigError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.lambda_balance <= 0:
            raise ConfigError(f"lambda_balance must be > 0, got {self.lambda_balance}")
        if self.clip_bound <= 0:
            raise ConfigError(f"clip_bound must be > 0, got {self.clip_bound}")
        if self.critic_lr <= 0 or self.generator_lr < 0 or self.critic_hidden < 1:
            raise ConfigError("critic_lr must be > 0, generator_lr >= 0 and critic_hidden >= 1")


class Critic(Module):
    """Feed-forward scorer d_in -> hidden -> hidden -> 1 with leaky ramps."""

    def __init__(self, d_in: int, clip_bound: float, rng: RngStream, hidden: int = 64, name: str = "critic"):
        self.d_in = d_in
        self.clip_bound = clip_bound
        self.layers = [
            Linear(d_in, hidden, rng, f"{name}.0"),
            Linear(hidden, hidden, rng, f"{name}.1"),
            Linear(hidden, 1, rng, f"{name}.2"),
        ]
        self.clip()

    def clip(self) -> None:
        c = self.clip_bound
        for p in self.parameters():
            np.clip(p.data, -c, c, out=p.data)

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ContractError(f"critic expects feature dim {self.d_in}, got {x.shape[-1]}")
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.leaky_relu(h, LEAK)
        return ad.reshape(h, (-1,))

    def lipschitz_bound(self) -> float:
        """Product of max-abs-row-sum norms: Lipschitz bound w.r.t. the sup norm."""
        bound = 1.0
        for layer in self.layers:
            bound *= float(np.abs(layer.W.data).sum(axis=0).max())
        return bound

    def max_lipschitz_bound(self) -> float:
        """Largest Lipschitz bound any clipped weight setting can reach."""
        c = self.clip_bound
        bound = 1.0
        for layer in self.layers:
            bound *= layer.W.shape[0] * c
        return bound


class RMSProp:
    def __init__(self, params, lr: float, decay: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq = [np.zeros_like(p.data) for p in self.params]

    def step(self, ascend: bool = False) -> None:
        sign = 1.0 if ascend else -1.0
        for p, s in zip(self.params, self.sq):
            s *= self.decay
            s += (1.0 - self.decay) * p.grad * p.grad
            p.data = p.data + sign * self.lr * p.grad / (np.sqrt(s) + self.eps)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


# ---------------------------------------------------------------------------
# gaps
# ---------------------------------------------------------------------------
def _flatten_rows(x: Tensor, d: int) -> Tensor:
    return ad.reshape(x, (-1, d))


def _mean_gap(score_a: Tensor, score_b: Tensor) -> Tensor:
    """``mean(a) - mean(b)``, centred on a constant so equal scores cancel exactly."""
    shift = float(score_a.data.reshape(-1)[0])
    return ad.tmean(score_a - shift) - ad.tmean(score_b - shift)


def innovation_gap(critic: Critic, v_hat, u_ref) -> Tensor:
    """``E[D(U)] - E[D(V_hat)]`` with rows taken along the last axis."""
    v_hat, u_ref = ad.as_tensor(v_hat), ad.as_tensor(u_ref)
    if v_hat.size == 0 or u_ref.size == 0:
        raise EmptyInputError("innovation_gap needs non-empty batches")
    if v_hat.shape[-1] != u_ref.shape[-1]:
        raise ContractError(f"feature dims differ: {v_hat.shape[-1]} vs {u_ref.shape[-1]}")
    d = v_hat.shape[-1]
    return _mean_gap(critic(_flatten_rows(u_ref, d)), critic(_flatten_rows(v_hat, d)))


def reconstruction_gap(critic: Critic, x_joint, x_generated) -> Tensor:
    """``E[D(true joint)] - E[D(past + generated)]``; inputs are (N, slots, D)."""
    x_joint, x_generated = ad.as_tensor(x_joint), ad.as_tensor(x_generated)
    if x_joint.shape[1:] != x_generated.shape[1:]:
        raise ContractError(f"trajectory shapes differ: {x_joint.shape} vs {x_generated.shape}")
    if x_joint.size == 0 or x_generated.size == 0:
        raise EmptyInputError("reconstruction_gap needs non-empty batches")
    n1, n2 = x_joint.shape[0], x_generated.shape[0]
    return _mean_gap(critic(ad.reshape(x_joint, (n1, -1))), critic(ad.reshape(x_generated, (n2, -1))))


def extract_innovation(enc: EncodedState) -> Tensor:
    """Pre-noise latent squashed into [0, 1] so it is comparable to the uniform reference.

    Swap this function to change how the Gaussian-style latent maps to innovations.
    """
    return ad.sigmoid(enc.mu)


def _generated_pair(model: UGGenerator, contexts: np.ndarray, rng: RngStream):
    res = model.forward(contexts, rng)
    v_hat = extract_innovation(res.encoded)
    y_hat = sample_predictive(res.output, res.output.gate_out, rng, 1)
    y_hat = ad.reshape(y_hat, tuple(res.output.mu_y.shape))
    x_gen = ad.concat([ad.Tensor(contexts), y_hat], axis=1)
    return res, v_hat, x_gen


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------
class AdversarialTrainer:
    """Holds the two critics and all optimizer state across steps."""

    def __init__(self, model: UGGenerator, cfg: AdversarialConfig):
        self.model = model
        self.cfg = cfg
        mc = model.cfg
        T = mc.H if cfg.T_forecast is None else cfg.T_forecast
        if T != mc.H:
            raise ConfigError(f"T_forecast ({T}) must equal the model horizon H ({mc.H})")
        rng = RngStream(cfg.seed)
        self.critic_inn = Critic(mc.d_z, cfg.clip_bound, rng, cfg.critic_hidden, "critic_inn")
        self.critic_rec = Critic((mc.L + T) * mc.D, cfg.clip_bound, rng, cfg.critic_hidden, "critic_rec")
        self.opt_inn = RMSProp(self.critic_inn.parameters(), cfg.critic_lr)
        self.opt_rec = RMSProp(self.critic_rec.parameters(), cfg.critic_lr)
        self.opt_gen = Adam(model.parameters(), cfg.generator_lr)
        self.steps = 0

    def objective(self, batch: WindowBatch, rng: RngStream):
        """``(gap_inn, gap_rec, combined)`` for the current generator and critics."""
        _, v_hat, x_gen = _generated_pair(self.model, batch.contexts, rng)
        u_ref = ad.Tensor(rng.uniform(v_hat.shape))
        x_joint = ad.Tensor(np.concatenate([batch.contexts, batch.targets], axis=1))
        g_inn = innovation_gap(self.critic_inn, v_hat, u_ref)
        g_rec = reconstruction_gap(self.critic_rec, x_joint, x_gen)
        return g_inn, g_rec, g_inn + self.cfg.lambda_balance * g_rec

    def critic_loss(self, batch: WindowBatch, rng: RngStream) -> Tensor:
        """Critics minimize the negated objective."""
        return -self.objective(batch, rng)[2]

    def generator_loss(self, batch: WindowBatch, rng: RngStream) -> Tensor:
        return self.objective(batch, rng)[2]

    def _gaps(self, batch: WindowBatch, rng: RngStream) -> tuple[float, float]:
        with ad.no_grad():
            g_inn, g_rec, _ = self.objective(batch, rng)
        return g_inn.item(), g_rec.item()

    def step(self, batch: WindowBatch, rng: RngStream, likelihood: TrainConfig | None = None) -> dict:
        """``n_critic`` clipped ascent steps on both critics, then one generator descent step.

        With ``likelihood`` given, the generator step also descends the
        likelihood objective scaled by ``likelihood_weight`` (combined mode).
        """
        cfg = self.cfg
        gen_params = self.model.parameters()
        critic_params = self.critic_inn.parameters() + self.critic_rec.parameters()
        before = self._gaps(batch, rng)
        for _ in range(cfg.n_critic):
            ad.zero_grad(critic_params)
            with _frozen(gen_params):
                loss = self.critic_loss(batch, rng)
            _check(loss, "critic objective", self.steps)
            ad.backward(loss)
            self.opt_inn.step()
            self.opt_rec.step()
            self.critic_inn.clip()
            self.critic_rec.clip()
        ad.zero_grad(gen_params)
        with _frozen(critic_params):
            g_inn, g_rec, gen_loss = self.objective(batch, rng)
            total = gen_loss
            lik_parts = None
            if likelihood is not None:
                lik, lik_parts, _ = total_loss(batch, self.model, likelihood, rng)
                total = gen_loss + cfg.likelihood_weight * lik
        _check(total, "generator objective", self.steps)
        ad.backward(total)
        self.opt_gen.step()
        after = self._gaps(batch, rng)
        self.steps += 1
        report = {
            "step": self.steps,
            "gap_inn_before": before[0], "gap_rec_before": before[1],
            "gap_inn_after": after[0], "gap_rec_after": after[1],
            "generator_loss": gen_loss.item(),
        }
        if lik_parts is not None:
            report["likelihood"] = lik_parts
        return report


class _frozen:
    """Temporarily mark parameters as constants so no graph is recorded through them."""

    def __init__(self, params):
        self.params = list(params)

    def __enter__(self):
        for p in self.params:
            p.requires_grad = False

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad = True


def _check(t: Tensor, what: str, step: int) -> None:
    if not math.isfinite(t.item()):
        raise NumericalAbort(f"adversarial step {step}: non-finite {what} ({t.item()!r})")


def adversarial_step(trainer: AdversarialTrainer, batch: WindowBatch, rng: RngStream,
                     likelihood: TrainConfig | None = None) -> dict:
    return trainer.step(batch, rng, likelihood)


def fit_adversarial(model: UGGenerator, train: WindowBatch, cfg: AdversarialConfig,
                    epochs: int, batch_size: int = 32, likelihood: TrainConfig | None = None,
                    start_epoch: int = 0, trainer: AdversarialTrainer | None = None) -> tuple[AdversarialTrainer, list[dict]]:
    """Run adversarial (or combined) steps over shuffled minibatches; returns step reports."""
    trainer = trainer or AdversarialTrainer(model, cfg)
    base = RngStream(cfg.seed)
    log_rows = []
    for i in range(epochs):
        epoch = start_epoch + i + 1
        rng = base.spawn(epoch)
        for b in train.batches(batch_size, rng.permutation(len(train))):
            row = trainer.step(b, rng, likelihood)
            row["epoch"] = epoch
            log_rows.append(row)
    return trainer, log_rows


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------
@dataclass
class ProbeResult:
    gap: float
    stderr: float
    lipschitz_bound: float
    max_lipschitz_bound: float


def train_probe_critic(
    a: np.ndarray,
    b: np.ndarray,
    rng: RngStream,
    steps: int = 500,
    clip_bound: float = 0.01,
    lr: float = 5e-5,
    hidden: int = 64,
    batch_size: int = 256,
) -> Critic:
    """Fresh clipped critic trained to score ``a`` above ``b``."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"probe inputs differ in feature dim: {a.shape[1]} vs {b.shape[1]}")
    critic = Critic(a.shape[1], clip_bound, rng, hidden, "probe")
    opt = RMSProp(critic.parameters(), lr)
    for _ in range(steps):
        ia = rng.integers(len(a), (min(batch_size, len(a)),))
        ib = rng.integers(len(b), (min(batch_size, len(b)),))
        opt.zero_grad()
        gap = ad.tmean(critic(a[ia])) - ad.tmean(critic(b[ib]))
        ad.backward(gap)
        opt.step(ascend=True)
        critic.clip()
    return critic


def probe_gap(critic: Critic, a: np.ndarray, b: np.ndarray) -> ProbeResult:
    """Mean score gap with a two-sample standard error."""
    with ad.no_grad():
        sa = critic(np.asarray(a, float).reshape(len(a), -1)).data
        sb = critic(np.asarray(b, float).reshape(len(b), -1)).data
    stderr = math.sqrt(sa.var(ddof=1) / len(sa) + sb.var(ddof=1) / len(sb))
    return ProbeResult(float(sa.mean() - sb.mean()), stderr, critic.lipschitz_bound(), critic.max_lipschitz_bound())


def attainable_gap(critic: Critic, a: np.ndarray, b: np.ndarray) -> float:
    """Upper bound on any clipped critic's gap for 1-D samples: max Lipschitz bound times W1."""
    a = np.asarray(a, float).reshape(-1)
    b = np.asarray(b, float).reshape(-1)
    return critic.max_lipschitz_bound() * wasserstein_distance(a, b)


@dataclass
class DiagnosticResult:
    gap_inn: float
    gap_rec: float
    stderr_inn: float
    stderr_rec: float


def weak_innovation_diagnostic(
    model: UGGenerator,
    held_out: WindowBatch,
    cfg: AdversarialConfig,
    rng: RngStream,
    steps: int = 500,
) -> DiagnosticResult:
    """Train fresh probe critics on half of ``held_out`` and measure gaps on the other half."""
    if len(held_out) < 4:
        raise EmptyInputError("diagnostic needs at least 4 held-out windows")
    with ad.no_grad():
        _, v_hat, x_gen = _generated_pair(model, held_out.contexts, rng)
    v = v_hat.data.reshape(-1, v_hat.shape[-1])
    u = rng.uniform(v.shape)
    joint = np.concatenate([held_out.contexts, held_out.targets], axis=1).reshape(len(held_out), -1)
    gen = x_gen.data.reshape(len(held_out), -1)
    return diagnostic_from_samples(v, u, joint, gen, cfg, rng, steps)


def diagnostic_from_samples(v_hat: np.ndarray, u_ref: np.ndarray, joint: np.ndarray, generated: np.ndarray,
                            cfg: AdversarialConfig, rng: RngStream, steps: int = 500) -> DiagnosticResult:
    """Probe stage of the diagnostic on precomputed samples (rows are observations)."""
    results = []
    for real, fake in ((u_ref, v_hat), (joint, generated)):
        real, fake = np.asarray(real, float), np.asarray(fake, float)
        half = len(real) // 2
        if half < 2 or len(fake) // 2 < 2:
            raise EmptyInputError("diagnostic needs at least 4 rows per sample set")
        critic = train_probe_critic(real[:half], fake[:len(fake) // 2], rng, steps, cfg.clip_bound,
                                    cfg.critic_lr, cfg.critic_hidden)
        results.append(probe_gap(critic, real[half:], fake[len(fake) // 2:]))
    return DiagnosticResult(results[0].gap, results[1].gap, results[0].stderr, results[1].stderr)
