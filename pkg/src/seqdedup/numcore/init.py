"""Seeded weight initialization."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


def uniform_init(rng: np.random.Generator, shape, name: str) -> Parameter:
    """Weight matrix drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    fan_in is the trailing extent (the input width of an affine layer).
    """
    fan_in = shape[-1]
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name)


def zero_init(shape, name: str) -> Parameter:
    return Parameter(np.zeros(shape, dtype=np.float64), name)
