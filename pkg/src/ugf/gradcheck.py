"""Central-difference gradient oracle and comparison helpers."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, backward, no_grad, zero_grad
from .errors import ContractError, OracleInvalidError

# Elementwise relative errors use max(|analytic|, |numeric|, floor) as the
# denominator so that near-zero gradients do not blow up on rounding noise.
REL_ERR_FLOOR = 1e-6


def _evaluate(loss_fn: Callable[[], Tensor | float]) -> float:
    with no_grad():
        out = loss_fn()
    return float(out.data if isinstance(out, Tensor) else out)


def finite_difference_gradient(
    loss_fn: Callable[[], Tensor | float],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for every element.

    ``loss_fn`` must read the current parameter values and draw any noise
    from a freshly seeded stream on every call, so that both evaluations of
    a perturbation see identical noise.
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    f0 = _evaluate(loss_fn)
    f1 = _evaluate(loss_fn)
    if not (f0 == f1 or (np.isnan(f0) and np.isnan(f1))):
        raise OracleInvalidError(
            f"loss_fn is not deterministic: two evaluations gave {f0!r} and {f1!r}"
        )
    grads: dict[str, np.ndarray] = {}
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = _evaluate(loss_fn)
            flat[i] = orig - step
            fm = _evaluate(loss_fn)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads[p.name] = g
    return grads


def analytic_gradient(
    loss_fn: Callable[[], Tensor], params: Sequence[Parameter]
) -> dict[str, np.ndarray]:
    zero_grad(params)
    backward(loss_fn())
    return {p.name: p.grad.copy() for p in params}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_ERR_FLOOR) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def compare_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter max relative error between backward and central differences."""
    ana = analytic_gradient(loss_fn, params)
    num = finite_difference_gradient(loss_fn, params, step)
    return {p.name: relative_error(ana[p.name], num[p.name]) for p in params}
