"""GRU cells and a bidirectional GRU scan.

Convention: z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
hbar = tanh(W_h x + U_h (r*h) + b_h), h_next = (1-z)*h + z*hbar.
Hidden size equals input size.

`gru_cell` is composed from taped primitives. `bigru` runs both directions
as one fused operation with a hand-written backward pass through time; the
two are cross-checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import uniform_init, zero_init
from .tensor import (
    Parameter,
    Tensor,
    _out,
    _sigmoid,
    add,
    affine,
    linear,
    mul,
    sigmoid,
    sub,
    tanh,
)


@dataclass
class GRUCellParams:
    W_z: Parameter
    U_z: Parameter
    b_z: Parameter
    W_r: Parameter
    U_r: Parameter
    b_r: Parameter
    W_h: Parameter
    U_h: Parameter
    b_h: Parameter

    def all(self) -> list[Parameter]:
        return [
            self.W_z, self.U_z, self.b_z,
            self.W_r, self.U_r, self.b_r,
            self.W_h, self.U_h, self.b_h,
        ]

    @property
    def size(self) -> int:
        return self.W_z.data.shape[0]


@dataclass
class BiGRUParams:
    fwd: GRUCellParams
    bwd: GRUCellParams

    def all(self) -> list[Parameter]:
        return self.fwd.all() + self.bwd.all()


def init_gru_cell(size: int, name: str, rng: np.random.Generator) -> GRUCellParams:
    def w(suffix):
        return uniform_init(rng, (size, size), f"{name}.{suffix}")

    return GRUCellParams(
        W_z=w("W_z"), U_z=w("U_z"), b_z=zero_init((size,), f"{name}.b_z"),
        W_r=w("W_r"), U_r=w("U_r"), b_r=zero_init((size,), f"{name}.b_r"),
        W_h=w("W_h"), U_h=w("U_h"), b_h=zero_init((size,), f"{name}.b_h"),
    )


def init_bigru(size: int, name: str, rng: np.random.Generator) -> BiGRUParams:
    return BiGRUParams(
        fwd=init_gru_cell(size, f"{name}.fwd", rng),
        bwd=init_gru_cell(size, f"{name}.bwd", rng),
    )


def gru_cell(x: Tensor, h_prev: Tensor, cell: GRUCellParams) -> Tensor:
    """One GRU step on row vectors x, h_prev of shape (1, p)."""
    z = sigmoid(add(affine(x, cell.W_z, cell.b_z), linear(h_prev, cell.U_z)))
    r = sigmoid(add(affine(x, cell.W_r, cell.b_r), linear(h_prev, cell.U_r)))
    hbar = tanh(add(affine(x, cell.W_h, cell.b_h), linear(mul(r, h_prev), cell.U_h)))
    return add(sub(h_prev, mul(z, h_prev)), mul(z, hbar))


def bigru(
    seq: Tensor,
    params: BiGRUParams,
    init_fwd: Tensor,
    init_bwd: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """Bidirectional GRU over seq: (N, p) -> outputs (N, 2p).

    Row t concatenates the forward hidden after step t and the backward
    hidden after scanning back to t. Also returns the two final hidden
    states (the forward hidden at the last row and the backward hidden at
    the first), as (1, p) views created on the tape.
    """
    n = seq.data.shape[0]
    p = params.fwd.size
    if n < 1:
        raise ValueError("bigru needs a non-empty sequence")
    if seq.data.shape[1] != p:
        raise ValueError(f"bigru: input width {seq.data.shape[1]} != hidden size {p}")

    xs = seq.data
    hs_f, stash_f = _gru_scan(params.fwd, xs, init_fwd.data.reshape(p))
    xs_rev = xs[::-1]
    hs_b_rev, stash_b = _gru_scan(params.bwd, xs_rev, init_bwd.data.reshape(p))
    data = np.concatenate([hs_f, hs_b_rev[::-1]], axis=1)

    parents = (seq, init_fwd, init_bwd) + tuple(params.all())

    def make(out):
        def run():
            g = out.grad
            g_f = g[:, :p]
            g_b_rev = g[:, p:][::-1]
            dxs_f, dh0_f = _gru_backprop(params.fwd, xs, stash_f, g_f)
            dxs_b_rev, dh0_b = _gru_backprop(params.bwd, xs_rev, stash_b, g_b_rev)
            if seq.requires_grad:
                seq._ensure_grad()
                seq.grad += dxs_f + dxs_b_rev[::-1]
            if init_fwd.requires_grad:
                init_fwd._ensure_grad()
                init_fwd.grad += dh0_f.reshape(init_fwd.data.shape)
            if init_bwd.requires_grad:
                init_bwd._ensure_grad()
                init_bwd.grad += dh0_b.reshape(init_bwd.data.shape)

        return run

    out = _out(data, parents, make)
    from .tensor import slice_cols, slice_rows

    final_fwd = slice_cols(slice_rows(out, n - 1, n), 0, p)
    final_bwd = slice_cols(slice_rows(out, 0, 1), p, 2 * p)
    return out, final_fwd, final_bwd


def _gru_scan(cell: GRUCellParams, xs: np.ndarray, h0: np.ndarray):
    """Forward GRU scan in plain numpy; stashes what backprop needs."""
    n, p = xs.shape
    Wz, Uz, bz = cell.W_z.data, cell.U_z.data, cell.b_z.data
    Wr, Ur, br = cell.W_r.data, cell.U_r.data, cell.b_r.data
    Wh, Uh, bh = cell.W_h.data, cell.U_h.data, cell.b_h.data
    # Input-side projections are batched across the whole sequence.
    ax_z = xs @ Wz.T + bz
    ax_r = xs @ Wr.T + br
    ax_h = xs @ Wh.T + bh
    hs = np.empty((n, p))
    h_prevs = np.empty((n, p))
    zs = np.empty((n, p))
    rs = np.empty((n, p))
    hbars = np.empty((n, p))
    h = h0
    for t in range(n):
        h_prevs[t] = h
        z = _sigmoid(ax_z[t] + h @ Uz.T)
        r = _sigmoid(ax_r[t] + h @ Ur.T)
        hbar = np.tanh(ax_h[t] + (r * h) @ Uh.T)
        h = (1.0 - z) * h + z * hbar
        hs[t], zs[t], rs[t], hbars[t] = h, z, r, hbar
    return hs, (h_prevs, zs, rs, hbars)


def _gru_backprop(cell: GRUCellParams, xs: np.ndarray, stash, gh: np.ndarray):
    """Backprop through time for one direction.

    gh holds the gradient arriving at each stored hidden state. Parameter
    gradients are accumulated in place; returns (d_inputs, d_initial_hidden).
    """
    h_prevs, zs, rs, hbars = stash
    n, p = xs.shape
    Uz, Ur, Uh = cell.U_z.data, cell.U_r.data, cell.U_h.data
    da_z = np.empty((n, p))
    da_r = np.empty((n, p))
    da_h = np.empty((n, p))
    carry = np.zeros(p)
    for t in range(n - 1, -1, -1):
        g = gh[t] + carry
        hp, z, r, hb = h_prevs[t], zs[t], rs[t], hbars[t]
        dz = g * (hb - hp)
        dhb = g * z
        dah = dhb * (1.0 - hb * hb)
        drh = dah @ Uh  # gradient w.r.t. (r * h_prev)
        dr = drh * hp
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        carry = g * (1.0 - z) + drh * r + dar @ Ur + daz @ Uz
        da_z[t], da_r[t], da_h[t] = daz, dar, dah
    # Parameter gradients, batched over time.
    for w, u, b, da, gate_h in (
        (cell.W_z, cell.U_z, cell.b_z, da_z, h_prevs),
        (cell.W_r, cell.U_r, cell.b_r, da_r, h_prevs),
        (cell.W_h, cell.U_h, cell.b_h, da_h, rs * h_prevs),
    ):
        w._ensure_grad()
        w.grad += da.T @ xs
        u._ensure_grad()
        u.grad += da.T @ gate_h
        b._ensure_grad()
        b.grad += da.sum(axis=0)
    dxs = da_z @ cell.W_z.data + da_r @ cell.W_r.data + da_h @ cell.W_h.data
    return dxs, carry
