"""Classical duplicate-removal algorithms and oracle selectors.

Every operation here works on candidates of a single class; callers are
expected to group proposals per (image, class) before calling.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, area, boxes_to_array, iou_matrix


@dataclass(frozen=True, eq=False)
class ScoredProposal:
    """A scored box candidate emitted by a detector for one image.

    `feat` is the appearance vector; `id` is a stable per-image index used
    for deterministic tie-breaking.
    """

    box: Box
    class_id: int
    s0: float
    feat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))
    id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.s0 <= 1.0) or not math.isfinite(self.s0):
            raise ValueError(f"proposal score must be in [0, 1], got {self.s0}")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """An annotated object; must have positive area."""

    box: Box
    class_id: int

    def __post_init__(self):
        if area(self.box) <= 0.0:
            raise ValueError(f"ground-truth box must have positive area: {self.box}")


def sort_key(p: ScoredProposal):
    """Total order for candidates: score descending, then coordinates, then id."""
    return (-p.s0, p.box.x1, p.box.y1, p.box.x2, p.box.y2, p.id)


def nms(cands: list[ScoredProposal], thresh: float) -> list[ScoredProposal]:
    """Greedy non-maximum suppression.

    Walks candidates in descending score order and drops any candidate whose
    IoU with an already-kept one exceeds `thresh`. Returns the kept subset in
    selection order.
    """
    _check_unit_interval("nms threshold", thresh)
    if not cands:
        return []
    order = sorted(range(len(cands)), key=lambda i: sort_key(cands[i]))
    boxes = boxes_to_array([c.box for c in cands])
    ious = iou_matrix(boxes, boxes)
    kept: list[int] = []
    for i in order:
        if all(ious[i, k] <= thresh for k in kept):
            kept.append(i)
    return [cands[i] for i in kept]


def soft_nms(
    cands: list[ScoredProposal],
    method: str = "linear",
    thresh: float = 0.5,
    sigma: float = 0.5,
    score_floor: float = 0.001,
) -> list[ScoredProposal]:
    """Soft-NMS: decay overlapping scores instead of deleting boxes.

    linear:   s <- s * (1 - iou)        when iou > thresh
    gaussian: s <- s * exp(-iou^2 / sigma)
    Candidates whose decayed score drops below `score_floor` are discarded.
    Returns rescored candidates in selection order.
    """
    if method not in ("linear", "gaussian"):
        raise ValueError(f"unknown soft-nms method {method!r}")
    if not cands:
        return []
    boxes = boxes_to_array([c.box for c in cands])
    ious = iou_matrix(boxes, boxes)
    scores = np.array([c.s0 for c in cands], dtype=np.float64)
    live = list(range(len(cands)))
    out: list[ScoredProposal] = []
    while live:
        m = min(live, key=lambda i: (-scores[i],) + sort_key(cands[i])[1:])
        live.remove(m)
        out.append(dataclasses.replace(cands[m], s0=float(scores[m])))
        survivors = []
        for i in live:
            ov = ious[m, i]
            if method == "linear":
                if ov > thresh:
                    scores[i] *= 1.0 - ov
            else:
                scores[i] *= math.exp(-(ov * ov) / sigma)
            if scores[i] >= score_floor:
                survivors.append(i)
        live = survivors
    return out


def box_vote(
    kept: list[ScoredProposal],
    pool: list[ScoredProposal],
    vote_thresh: float = 0.5,
) -> list[ScoredProposal]:
    """Refine each kept box as the score-weighted mean of its overlapping voters.

    Voters are pool members with IoU >= vote_thresh against the kept box.
    Scores are left untouched; a kept box with no voters passes through.
    """
    _check_unit_interval("vote threshold", vote_thresh)
    if not kept:
        return []
    pool_boxes = boxes_to_array([p.box for p in pool])
    kept_boxes = boxes_to_array([k.box for k in kept])
    ious = iou_matrix(kept_boxes, pool_boxes) if pool else np.zeros((len(kept), 0))
    out = []
    for row, k in enumerate(kept):
        voters = np.nonzero(ious[row] >= vote_thresh)[0]
        if voters.size == 0:
            out.append(k)
            continue
        weights = np.array([pool[j].s0 for j in voters], dtype=np.float64)
        total = weights.sum()
        if total <= 0.0:
            weights = np.ones_like(weights)
            total = weights.sum()
        coords = (weights[:, None] * pool_boxes[voters]).sum(axis=0) / total
        out.append(dataclasses.replace(k, box=Box(*coords)))
    return out


def no_removal(cands: list[ScoredProposal], score_thresh: float) -> list[ScoredProposal]:
    """Keep every candidate whose score strictly exceeds the threshold."""
    return [c for c in cands if c.s0 > score_thresh]


def score_oracle(
    cands: list[ScoredProposal],
    gts,
    iou_thresh: float = 0.5,
) -> list[ScoredProposal]:
    """Upper-bound selector: per ground truth, the highest-scored candidate
    with IoU >= iou_thresh.

    Each candidate can be claimed by at most one ground truth; ground truths
    are served greedily in descending order of their best candidate's score.
    Ground truths with no qualifying candidate contribute nothing.
    """
    if not cands or not gts:
        return []
    ious = iou_matrix(
        boxes_to_array([g.box for g in gts]), boxes_to_array([c.box for c in cands])
    )
    prefs = []
    for gi in range(len(gts)):
        qual = [ci for ci in range(len(cands)) if ious[gi, ci] >= iou_thresh]
        qual.sort(key=lambda ci: sort_key(cands[ci]))
        if qual:
            prefs.append((-cands[qual[0]].s0, gi, qual))
    prefs.sort(key=lambda t: t[:2])
    claimed: set[int] = set()
    out = []
    for _, _, qual in prefs:
        for ci in qual:
            if ci not in claimed:
                claimed.add(ci)
                out.append(cands[ci])
                break
    return out


def iou_oracle(cands: list[ScoredProposal], gts) -> list[ScoredProposal]:
    """Upper-bound selector: per ground truth, the candidate with maximum IoU.

    Requires strictly positive overlap; ties broken by higher score then lower
    id. Contention across ground truths is resolved greedily, best overlap
    first, one claim per candidate.
    """
    if not cands or not gts:
        return []
    ious = iou_matrix(
        boxes_to_array([g.box for g in gts]), boxes_to_array([c.box for c in cands])
    )
    prefs = []
    for gi in range(len(gts)):
        qual = [ci for ci in range(len(cands)) if ious[gi, ci] > 0.0]
        qual.sort(key=lambda ci: (-ious[gi, ci], -cands[ci].s0, cands[ci].id))
        if qual:
            prefs.append((-ious[gi, qual[0]], gi, qual))
    prefs.sort(key=lambda t: t[:2])
    claimed: set[int] = set()
    out = []
    for _, _, qual in prefs:
        for ci in qual:
            if ci not in claimed:
                claimed.add(ci)
                out.append(cands[ci])
                break
    return out


def _check_unit_interval(name: str, value: float) -> None:
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
