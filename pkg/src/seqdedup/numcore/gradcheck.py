"""Finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    n_coords: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(
    closure,
    params,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int = 24,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a deterministic scalar closure against
    central finite differences.

    For each parameter, up to `max_coords_per_param` coordinates are probed
    (all of them when the parameter is small). The reported error is
    max |analytic - central| / max(1e-8, |central|) over probed coordinates.
    """
    params = list(params)
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = closure()
    if not isinstance(loss, Tensor):
        raise TypeError("closure must return a scalar Tensor")
    backward(loss)
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    worst = 0.0
    worst_param = ""
    worst_index: tuple = ()
    n_coords = 0
    for p in params:
        size = p.data.size
        if size == 0:
            continue
        if size <= max_coords_per_param:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            c = int(c)
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                hi = float(closure().data)
                flat[c] = orig - eps
                lo = float(closure().data)
                flat[c] = orig
            fd = (hi - lo) / (2.0 * eps)
            a = analytic[p.name].reshape(-1)[c]
            rel = abs(a - fd) / max(1e-8, abs(fd))
            n_coords += 1
            if rel > worst:
                worst = rel
                worst_param = p.name
                worst_index = np.unravel_index(c, p.data.shape)
    for p in params:
        p.grad = None
    return GradCheckReport(
        max_rel_err=worst,
        worst_param=worst_param,
        worst_index=worst_index,
        n_coords=n_coords,
        tol=tol,
    )
