"""Tiny layer helpers: named parameter containers with seeded init."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .rng import RngStream


class Module:
    """Anything holding Parameters in attributes or child Modules."""

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for v in vars(self).values():
            if isinstance(v, Parameter):
                out.append(v)
            elif isinstance(v, Module):
                out.extend(v.parameters())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, Parameter):
                        out.append(item)
                    elif isinstance(item, Module):
                        out.extend(item.parameters())
        return out


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngStream, name: str, scale: float | None = None):
        scale = 1.0 / math.sqrt(d_in) if scale is None else scale
        self.W = Parameter(rng.normal((d_in, d_out)) * scale, f"{name}.W")
        self.b = Parameter(np.zeros(d_out), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.W) + self.b


class MLP(Module):
    """Stack of Linear layers with an activation between them (not after the last)."""

    def __init__(self, widths, rng: RngStream, name: str, activation=ad.softplus):
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x
