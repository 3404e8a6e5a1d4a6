"""Fused per-candidate input features.

Each candidate contributes four ingredients: its appearance vector, its
detector score, a sinusoidal encoding of its rank in the score ordering, and
its normalized box geometry. Score and geometry are tiled up to the rank
embedding width, everything is concatenated, and two relu affine layers
produce the fused feature the recurrent model consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .geometry import ImageSize, normalize_geometric
from .numcore.init import uniform_init, zero_init
from .suppression import ScoredProposal

DEFAULT_RANK_DIM = 32


@dataclass(frozen=True)
class RankEncoding:
    """Sinusoid bank configuration; the width must be even and >= 2."""

    d_r: int = DEFAULT_RANK_DIM

    def __post_init__(self):
        if self.d_r < 2 or self.d_r % 2 != 0:
            raise ValueError(f"rank embedding width must be even and >= 2, got {self.d_r}")


@dataclass(frozen=True, eq=False)
class EmbeddedProposal:
    """Fused feature for one candidate, with its rank and provenance id."""

    f_L: np.ndarray
    rank: int
    prop_id: int


@dataclass
class EmbeddingParams:
    W_A: nc.Parameter
    b_A: nc.Parameter
    W_L: nc.Parameter
    b_L: nc.Parameter

    def all(self) -> list[nc.Parameter]:
        return [self.W_A, self.b_A, self.W_L, self.b_L]


def init_embedding(d_a: int, d_l: int, d_r: int, rng, prefix: str = "emb") -> EmbeddingParams:
    return EmbeddingParams(
        W_A=uniform_init(rng, (d_l, d_a), f"{prefix}.W_A"),
        b_A=zero_init((d_l,), f"{prefix}.b_A"),
        W_L=uniform_init(rng, (d_l, d_l + 3 * d_r), f"{prefix}.W_L"),
        b_L=zero_init((d_l,), f"{prefix}.b_L"),
    )


def rank_encode(rank: int, d_r: int) -> np.ndarray:
    """Sinusoidal encoding of an integer rank.

    out[2i] = sin(rank / 10000^(2i/d_r)), out[2i+1] = cos(same argument).
    Ranks are 1-based in normal use; rank 0 is allowed and encodes to the
    alternating [0, 1, 0, 1, ...] pattern.
    """
    return rank_encode_many(np.array([rank]), d_r)[0]


def rank_encode_many(ranks: np.ndarray, d_r: int) -> np.ndarray:
    """Vectorized rank_encode: (N,) integer ranks -> (N, d_r)."""
    RankEncoding(d_r)
    ranks = np.asarray(ranks, dtype=np.float64).reshape(-1, 1)
    i = np.arange(d_r // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * i / d_r)
    angles = ranks * freq
    out = np.empty((ranks.shape[0], d_r), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def tile_score(s0: float, d_r: int) -> np.ndarray:
    """Repeat a scalar score d_r times."""
    return np.full(d_r, float(s0), dtype=np.float64)


def tile_geo(f_geo: np.ndarray, d_r: int) -> np.ndarray:
    """Block-repeat a geometric 4-vector to width d_r (d_r must divide by 4)."""
    f_geo = np.asarray(f_geo, dtype=np.float64)
    if f_geo.shape != (4,):
        raise ValueError(f"geometric feature must have length 4, got {f_geo.shape}")
    if d_r % 4 != 0:
        raise ValueError(f"tile width must be divisible by 4, got {d_r}")
    return np.tile(f_geo, d_r // 4)


def raw_inputs(
    cands: list[ScoredProposal],
    ranks,
    img: ImageSize,
    d_r: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the constant inputs for a sorted candidate sequence.

    Returns (appearance (N, d_a), side features (N, 3*d_r)) where the side
    block lays out tiled score, rank encoding, and tiled geometry in order.
    """
    n = len(cands)
    feats = np.stack([c.feat for c in cands]) if n else np.zeros((0, 0))
    side = np.empty((n, 3 * d_r), dtype=np.float64)
    rank_block = rank_encode_many(np.asarray(ranks), d_r)
    for i, c in enumerate(cands):
        side[i, :d_r] = tile_score(c.s0, d_r)
        side[i, 2 * d_r :] = tile_geo(normalize_geometric(c.box, img), d_r)
    side[:, d_r : 2 * d_r] = rank_block
    return feats, side


def embed_sequence(
    feats: nc.Tensor,
    side: nc.Tensor,
    params: EmbeddingParams,
) -> nc.Tensor:
    """Taped fused feature for a whole sequence: (N, d_a)+(N, 3 d_r) -> (N, d_l)."""
    inner = nc.relu(nc.affine(feats, params.W_A, params.b_A))
    stacked = nc.concat_cols([inner, side])
    return nc.relu(nc.affine(stacked, params.W_L, params.b_L))


def embed(
    p: ScoredProposal,
    rank: int,
    img: ImageSize,
    params: EmbeddingParams,
    d_r: int = DEFAULT_RANK_DIM,
) -> EmbeddedProposal:
    """Fused feature for a single candidate at a given 1-based rank."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    d_a = params.W_A.data.shape[1]
    if p.feat.shape != (d_a,):
        raise ValueError(f"appearance length {p.feat.shape} does not match configured {d_a}")
    feats, side = raw_inputs([p], [rank], img, d_r)
    with nc.no_grad():
        f_l = embed_sequence(nc.constant(feats), nc.constant(side), params)
    return EmbeddedProposal(f_L=f_l.data[0].copy(), rank=rank, prop_id=p.id)
