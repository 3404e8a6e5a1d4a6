"""Label assignment, loss, schedule, and the sequential two-stage trainer.

Stage 1 learns to imitate NMS so that easy duplicates can be suppressed
cheaply; stage 2 is trained on stage-1 survivors against ground truth, one
binary head per overlap threshold. Only the model score s1 enters the loss;
the detector score s0 participates solely through candidate ordering,
gating, and the final inference-time product s0*s1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .evaluation import Detection
from .geometry import boxes_to_array, iou_matrix
from .model import (
    ModelConfig,
    ModelParams,
    final_score,
    forward,
    forward_sorted,
    init_params,
    sort_candidates,
)
from .suppression import GroundTruth, ScoredProposal, nms, sort_key

STAGE1_SCORE_GATE = 0.01
STAGE2_SCORE_GATE = 0.01
STAGE1_NMS_THRESH = 0.6


@dataclass(frozen=True)
class StageConfig:
    """Per-stage training recipe.

    Stage 1 gates raw candidates by s0 >= score_gate and labels them with
    NMS membership; stage 2 gates by stage-1 final score (s0*s1) >
    score_gate and labels survivors from ground truth.
    """

    stage: int
    score_gate: float
    pos_weight: float
    epochs: int = 12
    lr: float = 0.01
    lr_final: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nms_thresh: float = STAGE1_NMS_THRESH

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if not (0.0 <= self.score_gate <= 1.0):
            raise ValueError(f"score gate must be in [0, 1], got {self.score_gate}")
        if self.pos_weight < 1.0:
            raise ValueError(f"positive weight must be >= 1, got {self.pos_weight}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def stage1_config(**overrides) -> StageConfig:
    return StageConfig(stage=1, score_gate=STAGE1_SCORE_GATE, pos_weight=4.0, **overrides)


def stage2_config(**overrides) -> StageConfig:
    return StageConfig(stage=2, score_gate=STAGE2_SCORE_GATE, pos_weight=2.0, **overrides)


def assign_labels_stage1(
    cands: list[ScoredProposal], nms_thresh: float = STAGE1_NMS_THRESH
) -> np.ndarray:
    """(N, 1) labels: 1 for candidates NMS keeps, 0 for the suppressed."""
    kept = {id(c) for c in nms(cands, nms_thresh)}
    return np.array([[1.0 if id(c) in kept else 0.0] for c in cands])


def assign_labels_stage2(
    cands: list[ScoredProposal],
    gts: list[GroundTruth],
    eta_list,
) -> np.ndarray:
    """(N, H) labels: per head h, each ground truth elects the highest-scored
    candidate overlapping it with IoU > eta_h.

    A candidate is claimed by at most one ground truth per head; contention
    is resolved greedily in favor of the ground truth whose best candidate
    scores highest. Electing the same candidate through several ground
    truths still yields a single positive.
    """
    n = len(cands)
    labels = np.zeros((n, len(eta_list)))
    if n == 0 or not gts:
        return labels
    ious = iou_matrix(
        boxes_to_array([g.box for g in gts]), boxes_to_array([c.box for c in cands])
    )
    for h, eta in enumerate(eta_list):
        prefs = []
        for gi in range(len(gts)):
            qual = [ci for ci in range(n) if ious[gi, ci] > eta]
            qual.sort(key=lambda ci: sort_key(cands[ci]))
            if qual:
                prefs.append((-cands[qual[0]].s0, gi, qual))
        prefs.sort(key=lambda t: t[:2])
        claimed: set[int] = set()
        for _, _, qual in prefs:
            for ci in qual:
                if ci not in claimed:
                    claimed.add(ci)
                    labels[ci, h] = 1.0
                    break
    return labels


def weighted_bce(s1: nc.Tensor, y: np.ndarray, pos_weight: float) -> nc.Tensor:
    """Mean over all entries of -[w*y*log(s1) + (1-y)*log(1-s1)].

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    if s1.data.shape != y.shape:
        raise ValueError(f"score/label shape mismatch {s1.data.shape} vs {y.shape}")
    clamped = nc.clip(s1, 1e-7, 1.0 - 1e-7)
    log_p = nc.log(clamped)
    log_q = nc.log(nc.add_scalar(nc.neg(clamped), 1.0))
    pos_mask = nc.constant(pos_weight * y)
    neg_mask = nc.constant(1.0 - y)
    stacked = nc.add(nc.mul(pos_mask, log_p), nc.mul(neg_mask, log_q))
    return nc.scale(nc.mean_all(stacked), -1.0)


def lr_schedule(epoch: int, total_epochs: int = 12, lr: float = 0.01, lr_final: float = 0.001) -> float:
    """Step schedule: the base rate for the first 10/12 of training, the
    final rate for the rest. The 10-of-12 split scales with total_epochs."""
    if epoch < 0 or epoch >= total_epochs:
        raise ValueError(f"epoch {epoch} outside configured total {total_epochs}")
    boundary = int(round(total_epochs * 10.0 / 12.0))
    return lr if epoch < boundary else lr_final


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: ModelParams
    cfg: ModelConfig
    heads: int
    losses: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, mean loss, lr)


def _sequence_units(scenes, gate_fn, label_fn, cap):
    """Materialize one training unit per (scene, class): the gated candidates
    in canonical order plus their label matrix."""
    units = []
    for scene in scenes:
        by_class: dict[int, list[ScoredProposal]] = {}
        for c in scene.props:
            if gate_fn(scene, c):
                by_class.setdefault(c.class_id, []).append(c)
        for class_id in sorted(by_class):
            cands = by_class[class_id]
            order, _ = sort_candidates(cands, cap)
            seq = [cands[i] for i in order]
            labels = label_fn(scene, class_id, seq)
            units.append((scene.image, seq, labels))
    return units


def _train_units(units, stage_cfg: StageConfig, model_cfg: ModelConfig, heads: int, seed: int) -> TrainResult:
    rng = np.random.default_rng([seed, stage_cfg.stage])
    params = init_params(model_cfg, heads, rng)
    result = TrainResult(params=params, cfg=model_cfg, heads=heads)
    if not units:
        raise ValueError("training requires a non-empty dataset")
    opt = nc.OptState(lr=stage_cfg.lr, momentum=stage_cfg.momentum, weight_decay=stage_cfg.weight_decay)
    all_params = params.all()
    shuffle_rng = np.random.default_rng([seed, stage_cfg.stage, 1])
    for epoch in range(stage_cfg.epochs):
        opt.lr = lr_schedule(epoch, stage_cfg.epochs, stage_cfg.lr, stage_cfg.lr_final)
        perm = shuffle_rng.permutation(len(units))
        total = 0.0
        for k in perm:
            img, seq, labels = units[k]
            s1, _ = forward_sorted(seq, img, params, model_cfg)
            loss = weighted_bce(s1, labels, stage_cfg.pos_weight)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            nc.backward(loss)
            nc.sgd_step(all_params, opt)
            total += value
        result.losses.append((epoch, total / len(units), opt.lr))
    return result


def train_stage(
    scenes,
    stage_cfg: StageConfig,
    model_cfg: ModelConfig,
    seed: int,
    stage1: TrainResult | None = None,
) -> TrainResult:
    """Train one stage over a dataset of scenes.

    Stage 1 needs only the scenes. Stage 2 additionally needs the trained
    stage-1 model to determine its input distribution.
    """
    if stage_cfg.stage == 1:
        units = _sequence_units(
            scenes,
            gate_fn=lambda scene, c: c.s0 >= stage_cfg.score_gate,
            label_fn=lambda scene, class_id, seq: assign_labels_stage1(seq, stage_cfg.nms_thresh),
            cap=model_cfg.cap,
        )
        return _train_units(units, stage_cfg, model_cfg, heads=1, seed=seed)
    if stage1 is None:
        raise ValueError("stage-2 training requires the trained stage-1 model")
    units = []
    for scene in scenes:
        survivors = stage1_survivors(scene, stage1.params, model_cfg, stage_cfg.score_gate)
        gts_by_class: dict[int, list[GroundTruth]] = {}
        for g in scene.gts:
            gts_by_class.setdefault(g.class_id, []).append(g)
        for class_id in sorted(survivors):
            cands = survivors[class_id]
            order, _ = sort_candidates(cands, model_cfg.cap)
            seq = [cands[i] for i in order]
            labels = assign_labels_stage2(seq, gts_by_class.get(class_id, []), model_cfg.eta)
            units.append((scene.image, seq, labels))
    return _train_units(units, stage_cfg, model_cfg, heads=len(model_cfg.eta), seed=seed)


def train_pipeline(
    scenes,
    model_cfg: ModelConfig,
    seed: int,
    stage1_cfg: StageConfig | None = None,
    stage2_cfg: StageConfig | None = None,
) -> tuple[TrainResult, TrainResult]:
    """Sequential two-stage training: fit stage 1, replay it over the
    training set to collect survivors, then fit stage 2 on those."""
    stage1_cfg = stage1_cfg or stage1_config()
    stage2_cfg = stage2_cfg or stage2_config()
    r1 = train_stage(scenes, stage1_cfg, model_cfg, seed)
    r2 = train_stage(scenes, stage2_cfg, model_cfg, seed, stage1=r1)
    return r1, r2


def stage1_survivors(
    scene,
    params: ModelParams,
    cfg: ModelConfig,
    gate: float = STAGE2_SCORE_GATE,
    input_gate: float = STAGE1_SCORE_GATE,
) -> dict[int, list[ScoredProposal]]:
    """Run stage 1 on one scene; per class, return candidates whose combined
    score s0*s1 stays above the gate."""
    by_class: dict[int, list[ScoredProposal]] = {}
    for c in scene.props:
        if c.s0 >= input_gate:
            by_class.setdefault(c.class_id, []).append(c)
    out: dict[int, list[ScoredProposal]] = {}
    for class_id, cands in by_class.items():
        s1, _ = forward(cands, scene.image, params, cfg)
        kept = [c for c, s in zip(cands, s1) if final_score(c.s0, s) > gate]
        if kept:
            out[class_id] = kept
    return out


def pipeline_detections(
    scenes,
    stage1_params: ModelParams,
    stage2_params: ModelParams,
    cfg: ModelConfig,
    stage2_gate: float = STAGE2_SCORE_GATE,
) -> list[Detection]:
    """Two-stage inference over a dataset.

    Stage 1 filters, stage 2 rescores the survivors; each survivor becomes a
    detection scored s0 * s1 with stage 2's head-averaged s1.
    """
    dets: list[Detection] = []
    for scene in scenes:
        survivors = stage1_survivors(scene, stage1_params, cfg, stage2_gate)
        for class_id in sorted(survivors):
            cands = survivors[class_id]
            s1, _ = forward(cands, scene.image, stage2_params, cfg)
            for c, s in zip(cands, s1):
                dets.append(
                    Detection(
                        image_id=scene.image_id,
                        class_id=class_id,
                        box=c.box,
                        score=final_score(c.s0, s),
                    )
                )
    return dets
