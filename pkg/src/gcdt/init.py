"""Parameter initializers."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator,
                   name: str | None = None) -> Tensor:
    bound = glorot_bound(shape[0], shape[1])
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape: tuple[int, ...], name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)
