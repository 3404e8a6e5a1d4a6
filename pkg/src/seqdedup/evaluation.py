"""COCO-style mAP evaluation and the oracle comparison table.

AP uses 101-point interpolation over recall; mAP averages ten IoU matching
thresholds from 0.5 to 0.95. Matching is greedy: detections in descending
score order each claim the unmatched ground truth with the highest
sufficient overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box, boxes_to_array, iou_matrix
from .suppression import (
    GroundTruth,
    iou_oracle,
    nms,
    no_removal,
    score_oracle,
    soft_nms,
)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
RETAINED_FLOOR = 0.01


@dataclass(frozen=True)
class Detection:
    """One scored output box attributed to an image and class."""

    image_id: int
    class_id: int
    box: Box
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0) or not math.isfinite(self.score):
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EvalReport:
    """mAP plus its per-threshold breakdown and the retained-count statistic."""

    mAP: float
    ap_per_threshold: tuple[float, ...]
    ap50: float
    ap75: float
    mean_retained: float

    CSV_HEADER = (
        "method,mAP,AP50,AP75,"
        + ",".join(f"AP@{t:.2f}" for t in IOU_THRESHOLDS)
        + ",mean_retained"
    )

    def csv_row(self, method: str) -> str:
        cells = [method, repr(self.mAP), repr(self.ap50), repr(self.ap75)]
        cells += [repr(a) for a in self.ap_per_threshold]
        cells.append(repr(self.mean_retained))
        return ",".join(cells)


def match_detections(dets: list[Detection], gts_by_image, iou_thresh: float) -> np.ndarray:
    """TP/FP flags for one class of detections, in descending score order.

    Each detection may match one previously unmatched ground truth in its
    own image, choosing the highest IoU at or above the threshold. Returns
    a boolean array aligned with the internal canonical ordering (score
    descending, ties by image then insertion index).
    """
    order = _canonical_order(dets)
    matched: dict[int, set[int]] = {}
    gt_boxes = {img: boxes_to_array([g.box for g in gs]) for img, gs in gts_by_image.items()}
    flags = np.zeros(len(dets), dtype=bool)
    for pos, di in enumerate(order):
        d = dets[di]
        boxes = gt_boxes.get(d.image_id)
        if boxes is None or boxes.shape[0] == 0:
            continue
        ious = iou_matrix(d.box.as_array()[None, :], boxes)[0]
        used = matched.setdefault(d.image_id, set())
        best, best_iou = -1, -1.0
        for gi, ov in enumerate(ious):
            if gi in used or ov < iou_thresh:
                continue
            if ov > best_iou:
                best, best_iou = gi, ov
        if best >= 0:
            used.add(best)
            flags[pos] = True
    return flags


def average_precision(flags: np.ndarray, n_gt: int) -> float | None:
    """101-point interpolated AP from ordered TP/FP flags.

    Returns None for the undefined cell (no ground truth and no
    detections); 0.0 when detections exist but nothing could match.
    """
    flags = np.asarray(flags, dtype=bool)
    if n_gt == 0:
        return None if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # Precision envelope: best precision achievable at or beyond each point.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    interp = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
    return float(interp.mean())


def map_coco(dets: list[Detection], gts_by_image) -> EvalReport:
    """Evaluate detections against per-image ground truths.

    Classes are the union of annotated and predicted classes; cells that are
    undefined (no ground truth, no detections) are skipped when averaging.
    """
    classes = sorted(
        {g.class_id for gs in gts_by_image.values() for g in gs}
        | {d.class_id for d in dets}
    )
    dets_by_class: dict[int, list[Detection]] = {c: [] for c in classes}
    for d in dets:
        dets_by_class[d.class_id].append(d)
    gt_count = {c: 0 for c in classes}
    gts_split: dict[int, dict[int, list[GroundTruth]]] = {c: {} for c in classes}
    for img, gs in gts_by_image.items():
        for g in gs:
            gts_split[g.class_id].setdefault(img, []).append(g)
            gt_count[g.class_id] += 1

    per_threshold = []
    for t in IOU_THRESHOLDS:
        cells = []
        for c in classes:
            flags = match_detections(dets_by_class[c], gts_split[c], t)
            ap = average_precision(flags, gt_count[c])
            if ap is not None:
                cells.append(ap)
        per_threshold.append(float(np.mean(cells)) if cells else 0.0)

    n_images = max(len(gts_by_image), 1)
    retained = sum(1 for d in dets if d.score > RETAINED_FLOOR) / n_images
    return EvalReport(
        mAP=float(np.mean(per_threshold)),
        ap_per_threshold=tuple(per_threshold),
        ap50=per_threshold[0],
        ap75=per_threshold[5],
        mean_retained=retained,
    )


def gts_by_image(scenes) -> dict[int, list[GroundTruth]]:
    return {scene.image_id: list(scene.gts) for scene in scenes}


def _canonical_order(dets) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].image_id, i))


# ---------------------------------------------------------------------------
# selector-based evaluation runs

def _per_class(scene):
    by_class: dict[int, list] = {}
    for c in scene.props:
        by_class.setdefault(c.class_id, []).append(c)
    gts: dict[int, list[GroundTruth]] = {}
    for g in scene.gts:
        gts.setdefault(g.class_id, []).append(g)
    return by_class, gts


def detections_for_selector(scenes, select) -> list[Detection]:
    """Apply a per-(image, class) selector and collect scored detections.

    `select(cands, gts)` returns kept proposals whose s0 becomes the
    detection score.
    """
    dets = []
    for scene in scenes:
        by_class, gts = _per_class(scene)
        for class_id in sorted(by_class):
            kept = select(by_class[class_id], gts.get(class_id, []))
            for p in kept:
                dets.append(
                    Detection(
                        image_id=scene.image_id,
                        class_id=class_id,
                        box=p.box,
                        score=p.s0,
                    )
                )
    return dets


def oracle_table(
    scenes,
    no_removal_thresh: float = 0.01,
    nms_thresh: float = 0.5,
    oracle_iou: float = 0.5,
) -> list[tuple[str, EvalReport]]:
    """The four-way comparison: keep-everything, NMS, and the two oracles."""
    gts = gts_by_image(scenes)
    selectors = [
        ("no_removal", lambda cands, g: no_removal(cands, no_removal_thresh)),
        ("nms", lambda cands, g: nms(cands, nms_thresh)),
        ("score_oracle", lambda cands, g: score_oracle(cands, g, oracle_iou)),
        ("iou_oracle", lambda cands, g: iou_oracle(cands, g)),
    ]
    rows = []
    for name, select in selectors:
        dets = detections_for_selector(scenes, select)
        rows.append((name, map_coco(dets, gts)))
    return rows


def report_csv(rows: list[tuple[str, EvalReport]]) -> str:
    lines = [EvalReport.CSV_HEADER]
    lines += [report.csv_row(method) for method, report in rows]
    return "\n".join(lines) + "\n"
