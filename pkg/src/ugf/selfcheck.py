"""Gradient-oracle self check of the full training objective on a tiny model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import WindowBatch
from .gradcheck import analytic_gradient, finite_difference_gradient, relative_error
from .model import ModelConfig, UGGenerator
from .rng import RngStream
from .training import TrainConfig, total_loss

TOLERANCE = 1e-4


def tiny_model_config(seed: int = 0, **overrides) -> ModelConfig:
    """D=1, L=8, H=2, d_z=4; the configuration the oracle check ships with."""
    base = dict(L=8, H=2, D=1, d_hidden=8, d_z=4, kernel_sizes=(3,), dec_hidden=8, seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class GradcheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "seeds": self.seeds,
                "max_rel_error": self.max_rel_error, "failing": self.failing}


def run_gradcheck(
    seeds=range(20),
    n_windows: int = 3,
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    step: float = 1e-5,
    corrupt_param: str | None = None,
) -> GradcheckReport:
    """Compare backward against central differences for every parameter and seed.

    ``corrupt_param`` perturbs that parameter's analytic gradient; it exists
    to demonstrate the check can fail.
    """
    report = GradcheckReport()
    train_cfg = train_cfg or TrainConfig(lambda1=0.1, lambda2=0.01)
    for seed in seeds:
        cfg = model_cfg or tiny_model_config()
        cfg = ModelConfig(**{**cfg.to_dict(), "seed": int(seed)})
        model = UGGenerator(cfg)
        data_rng = RngStream(10_000 + int(seed))
        batch = WindowBatch(data_rng.normal((n_windows, cfg.L, cfg.D)),
                            data_rng.normal((n_windows, cfg.H, cfg.D)), np.arange(n_windows))

        def loss_fn(seed=seed):
            return total_loss(batch, model, train_cfg, RngStream(20_000 + int(seed)))[0]

        params = model.parameters()
        ana = analytic_gradient(loss_fn, params)
        if corrupt_param is not None and corrupt_param in ana:
            ana[corrupt_param] = ana[corrupt_param] * 1.01 + 1e-3
        num = finite_difference_gradient(loss_fn, params, step)
        for p in params:
            err = relative_error(ana[p.name], num[p.name])
            report.max_rel_error[p.name] = max(report.max_rel_error.get(p.name, 0.0), err)
        report.seeds.append(int(seed))
    return report
