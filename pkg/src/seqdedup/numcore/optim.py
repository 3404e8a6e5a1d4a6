"""SGD with momentum and weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class OptState:
    """Optimizer hyperparameters plus per-parameter momentum buffers."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params, opt: OptState) -> None:
    """One update: v <- momentum*v + grad + wd*value; value <- value - lr*v.

    Parameters with no accumulated gradient are treated as grad = 0 (weight
    decay still applies). Gradients are cleared afterwards.
    """
    for p in params:
        v = opt.velocity.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
            opt.velocity[p.name] = v
        v *= opt.momentum
        if p.grad is not None:
            v += p.grad
        if opt.weight_decay != 0.0:
            v += opt.weight_decay * p.data
        p.data -= opt.lr * v
        p.grad = None
