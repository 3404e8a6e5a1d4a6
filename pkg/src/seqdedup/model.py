"""Per-class sequential context scoring model.

Candidates are sorted by detector score, embedded, scanned by a
bidirectional GRU encoder, re-scanned by a decoder seeded with the encoder's
final hidden states, related to each other through additive global
attention, fused through a context gate, and finally mapped to one
keep-probability per decision head. One parameter set is shared across all
classes; each (image, class) sequence is processed independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .embedding import EmbeddingParams, embed_sequence, init_embedding, raw_inputs
from .geometry import ImageSize
from .numcore.gru import BiGRUParams, bigru, init_bigru
from .numcore.init import uniform_init, zero_init
from .suppression import ScoredProposal, sort_key


@dataclass(frozen=True)
class ModelConfig:
    """Widths and limits of the scoring model.

    d_m is fixed at 2*d_l because the bidirectional encoder concatenates two
    d_l-wide hidden states. d_att defaults to d_m.
    """

    d_a: int = 64
    d_l: int = 128
    d_r: int = 32
    d_att: int = 0  # 0 means "use d_m"
    eta: tuple[float, ...] = (0.5,)
    cap: int = 500

    def __post_init__(self):
        if self.d_l < 1 or self.d_a < 1:
            raise ValueError("feature widths must be positive")
        if self.d_r < 4 or self.d_r % 4 != 0:
            raise ValueError(f"d_r must be a positive multiple of 4, got {self.d_r}")
        if self.cap < 1:
            raise ValueError("sequence cap must be >= 1")
        if not self.eta:
            raise ValueError("at least one decision-head threshold is required")

    @property
    def d_m(self) -> int:
        return 2 * self.d_l

    @property
    def att_width(self) -> int:
        return self.d_att if self.d_att > 0 else self.d_m


@dataclass
class ModelParams:
    emb: EmbeddingParams
    enc: BiGRUParams
    dec: BiGRUParams
    W_M: nc.Parameter
    b_M: nc.Parameter
    W_H: nc.Parameter
    b_H: nc.Parameter
    w_S: nc.Parameter
    b_S: nc.Parameter
    W_glob: nc.Parameter
    b_glob: nc.Parameter
    W_C1: nc.Parameter
    b_C1: nc.Parameter
    W_C2: nc.Parameter
    b_C2: nc.Parameter
    W_C3: nc.Parameter
    b_C3: nc.Parameter
    W_D: nc.Parameter
    b_D: nc.Parameter

    def all(self) -> list[nc.Parameter]:
        return (
            self.emb.all()
            + self.enc.all()
            + self.dec.all()
            + [
                self.W_M, self.b_M, self.W_H, self.b_H, self.w_S, self.b_S,
                self.W_glob, self.b_glob, self.W_C1, self.b_C1, self.W_C2,
                self.b_C2, self.W_C3, self.b_C3, self.W_D, self.b_D,
            ]
        )

    @property
    def heads(self) -> int:
        return self.W_D.data.shape[0]


@dataclass
class ForwardTrace:
    """Intermediate features of one forward pass, detached to plain arrays.

    `order` maps sequence position to the caller's candidate index;
    `truncated` lists candidate indices dropped by the sequence cap.
    """

    order: list[int]
    truncated: list[int]
    f_L: np.ndarray
    f_M: np.ndarray
    f_H: np.ndarray
    S_a: np.ndarray
    f_glob: np.ndarray
    f_Z: np.ndarray
    f_V: np.ndarray
    f_T: np.ndarray
    f_C: np.ndarray
    s1: np.ndarray


def init_params(cfg: ModelConfig, heads: int, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters; draw order is fixed so a seed pins every weight."""
    if heads < 1:
        raise ValueError("need at least one decision head")
    d_l, d_m, d_att = cfg.d_l, cfg.d_m, cfg.att_width
    return ModelParams(
        emb=init_embedding(cfg.d_a, d_l, cfg.d_r, rng),
        enc=init_bigru(d_l, "enc", rng),
        dec=init_bigru(d_l, "dec", rng),
        W_M=uniform_init(rng, (d_att, d_m), "att.W_M"),
        b_M=zero_init((d_att,), "att.b_M"),
        W_H=uniform_init(rng, (d_att, d_m), "att.W_H"),
        b_H=zero_init((d_att,), "att.b_H"),
        w_S=uniform_init(rng, (1, d_att), "att.w_S"),
        b_S=zero_init((1,), "att.b_S"),
        W_glob=uniform_init(rng, (d_m, 2 * d_m), "att.W_glob"),
        b_glob=zero_init((d_m,), "att.b_glob"),
        W_C1=uniform_init(rng, (d_m, d_l + d_m), "gate.W_C1"),
        b_C1=zero_init((d_m,), "gate.b_C1"),
        W_C2=uniform_init(rng, (d_m, d_l + 2 * d_m), "gate.W_C2"),
        b_C2=zero_init((d_m,), "gate.b_C2"),
        W_C3=uniform_init(rng, (d_m, d_m), "gate.W_C3"),
        b_C3=zero_init((d_m,), "gate.b_C3"),
        W_D=uniform_init(rng, (heads, d_m), "head.W_D"),
        b_D=zero_init((heads,), "head.b_D"),
    )


def sort_candidates(
    cands: list[ScoredProposal], cap: int
) -> tuple[list[int], list[int]]:
    """Canonical processing order: descending score with a total tie-break.

    Returns (kept indices in rank order, truncated indices). The lowest
    scored candidates beyond `cap` are truncated.
    """
    order = sorted(range(len(cands)), key=lambda i: sort_key(cands[i]))
    return order[:cap], order[cap:]


def encode(f_L: nc.Tensor, enc: BiGRUParams):
    """Bidirectional encoder scan from zero initial hidden states."""
    p = enc.fwd.size
    zero_f = nc.constant(np.zeros(p))
    zero_b = nc.constant(np.zeros(p))
    return bigru(f_L, enc, zero_f, zero_b)


def decode(f_L: nc.Tensor, dec: BiGRUParams, final_fwd: nc.Tensor, final_bwd: nc.Tensor):
    """Decoder re-scan seeded per direction with the encoder's final hiddens."""
    out, _, _ = bigru(f_L, dec, final_fwd, final_bwd)
    return out


def global_attention(f_M: nc.Tensor, f_H: nc.Tensor, params: ModelParams):
    """Additive attention between decoder positions (rows) and encoder
    positions (columns), followed by the fused global feature.

    Returns (S_a, f_glob) where every S_a row is a distribution over
    encoder positions.
    """
    n = f_M.data.shape[0]
    proj_m = nc.affine(f_M, params.W_M, params.b_M)
    proj_h = nc.affine(f_H, params.W_H, params.b_H)
    # Pairwise sums: flatten (i, j) to row i*n + j.
    grid = nc.tanh(nc.add(nc.tile_vertical(proj_m, n), nc.repeat_rows(proj_h, n)))
    logits = nc.reshape(nc.affine(grid, params.w_S, params.b_S), (n, n))
    s_a = nc.softmax_rows(logits)
    context = nc.matmul(s_a, f_M)
    f_glob = nc.relu(
        nc.affine(nc.concat_cols([context, f_H]), params.W_glob, params.b_glob)
    )
    return s_a, f_glob


def context_gate(f_L: nc.Tensor, f_H: nc.Tensor, f_glob: nc.Tensor, params: ModelParams):
    """Gated fusion of low, high, and global features.

    The gate rescales the global (source) contribution before it joins the
    direct (target) path, then a tanh squashes the sum.
    """
    f_Z = nc.sigmoid(nc.affine(nc.concat_cols([f_L, f_H, f_glob]), params.W_C2, params.b_C2))
    f_V = nc.affine(f_glob, params.W_C3, params.b_C3)
    f_T = nc.affine(nc.concat_cols([f_L, f_H]), params.W_C1, params.b_C1)
    f_C = nc.tanh(nc.add(f_T, nc.mul(f_Z, f_V)))
    return f_C, f_Z, f_V, f_T


def decide(f_C: nc.Tensor, params: ModelParams) -> nc.Tensor:
    """Per-head keep probabilities: sigmoid(W_D f_C + b_D), shape (N, H)."""
    return nc.sigmoid(nc.affine(f_C, params.W_D, params.b_D))


def forward_sorted(
    cands_sorted: list[ScoredProposal],
    img: ImageSize,
    params: ModelParams,
    cfg: ModelConfig,
):
    """Taped forward pass over an already-sorted sequence.

    Returns (s1 tensor (N, H), dict of intermediate tensors).
    """
    n = len(cands_sorted)
    if n == 0:
        raise ValueError("forward needs at least one candidate")
    feats, side = raw_inputs(cands_sorted, np.arange(1, n + 1), img, cfg.d_r)
    f_L = embed_sequence(nc.constant(feats), nc.constant(side), params.emb)
    f_M, fin_f, fin_b = encode(f_L, params.enc)
    f_H = decode(f_L, params.dec, fin_f, fin_b)
    s_a, f_glob = global_attention(f_M, f_H, params)
    f_C, f_Z, f_V, f_T = context_gate(f_L, f_H, f_glob, params)
    s1 = decide(f_C, params)
    trace = {
        "f_L": f_L, "f_M": f_M, "f_H": f_H, "S_a": s_a,
        "f_glob": f_glob, "f_Z": f_Z, "f_V": f_V, "f_T": f_T, "f_C": f_C, "s1": s1,
    }
    return s1, trace


def forward(
    cands: list[ScoredProposal],
    img: ImageSize,
    params: ModelParams,
    cfg: ModelConfig,
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Head-averaged keep probability per candidate, aligned to input order.

    Candidates truncated by the sequence cap receive 0. Returns (scores,
    trace); trace is None for an empty input.
    """
    if not cands:
        return np.zeros(0), None
    order, truncated = sort_candidates(cands, cfg.cap)
    seq = [cands[i] for i in order]
    with nc.no_grad():
        s1, tensors = forward_sorted(seq, img, params, cfg)
    avg = head_average(s1.data)
    scores = np.zeros(len(cands))
    scores[order] = avg
    trace = ForwardTrace(
        order=order,
        truncated=truncated,
        **{k: v.data.copy() for k, v in tensors.items()},
    )
    return scores, trace


def head_average(s1: np.ndarray) -> np.ndarray:
    """Average over decision heads via a running mean.

    The incremental form returns each head's value exactly when all heads
    agree, which keeps duplicated-head models bitwise equal to the single
    head they were copied from.
    """
    out = s1[:, 0].copy()
    for h in range(1, s1.shape[1]):
        out += (s1[:, h] - out) / (h + 1)
    return out


def final_score(s0: float, s1: float) -> float:
    """Fuse detector confidence and model keep probability."""
    return s0 * s1


def save_model(path, params: ModelParams, cfg: ModelConfig) -> None:
    """Write a checkpoint whose manifest also records the model config."""
    meta = {
        "d_a": cfg.d_a,
        "d_l": cfg.d_l,
        "d_m": cfg.d_m,
        "d_r": cfg.d_r,
        "d_att": cfg.att_width,
        "eta": ",".join(repr(e) for e in cfg.eta),
        "cap": cfg.cap,
        "heads": params.heads,
    }
    nc.save_checkpoint(path, params.all(), meta)


def load_model(path) -> tuple[ModelParams, ModelConfig]:
    """Rebuild parameters and config from a checkpoint."""
    tensors, meta = nc.load_checkpoint(path)
    try:
        cfg = ModelConfig(
            d_a=int(meta["d_a"]),
            d_l=int(meta["d_l"]),
            d_r=int(meta["d_r"]),
            d_att=int(meta["d_att"]),
            eta=tuple(float(e) for e in meta["eta"].split(",")),
            cap=int(meta["cap"]),
        )
        heads = int(meta["heads"])
    except KeyError as missing:
        raise ValueError(f"{path}: checkpoint manifest lacks {missing}") from None
    params = init_params(cfg, heads, np.random.default_rng(0))
    from .numcore.checkpoint import restore_params

    restore_params(params.all(), tensors)
    return params, cfg
