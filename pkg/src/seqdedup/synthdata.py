"""Synthetic proposal benchmark.

Scenes hold ground-truth objects and clouds of jittered, noisily scored
proposals standing in for a detector's output. Scores correlate with
localization quality but are corrupted, so a fraction of proposals carries a
high score with poor overlap; appearance features mix a per-object latent
with noise in proportion to overlap, so they carry both identity and
quality signal.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, ImageSize, boxes_to_array, iou, iou_matrix
from .suppression import GroundTruth, ScoredProposal

FORMAT = "seqdedup-scenes-1"


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 4
    image_w: float = 640.0
    image_h: float = 480.0
    objects_per_scene: tuple[int, int] = (2, 6)
    proposals_per_object: tuple[int, int] = (10, 30)
    jitter: float = 0.25
    score_slope: float = 0.75
    score_offset: float = 0.15
    score_noise: float = 0.12
    feat_dim: int = 64
    feat_noise: float = 0.35
    background_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError("need at least one class")
        for name, (lo, hi) in (
            ("objects_per_scene", self.objects_per_scene),
            ("proposals_per_object", self.proposals_per_object),
        ):
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} range must be nonempty, got ({lo}, {hi})")
        for name, v in (
            ("jitter", self.jitter),
            ("score_noise", self.score_noise),
            ("feat_noise", self.feat_noise),
            ("background_rate", self.background_rate),
        ):
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.feat_dim < 1:
            raise ValueError("feature dimension must be positive")


@dataclass(eq=False)
class Scene:
    image: ImageSize
    gts: list[GroundTruth]
    props: list[ScoredProposal]
    image_id: int = 0


def generate_scene(cfg: SynthConfig, rng: np.random.Generator, image_id: int = 0) -> Scene:
    """Sample one scene: objects, per-object proposal clouds, background clutter."""
    w, h = cfg.image_w, cfg.image_h
    min_side = 2.0
    n_obj = int(rng.integers(cfg.objects_per_scene[0], cfg.objects_per_scene[1] + 1))
    gts: list[GroundTruth] = []
    latents: list[np.ndarray] = []
    for _ in range(n_obj):
        bw = rng.uniform(0.08, 0.35) * w
        bh = rng.uniform(0.08, 0.35) * h
        x1 = rng.uniform(0.0, w - bw)
        y1 = rng.uniform(0.0, h - bh)
        gts.append(GroundTruth(Box(x1, y1, x1 + bw, y1 + bh), int(rng.integers(cfg.classes))))
        latents.append(rng.standard_normal(cfg.feat_dim))

    props: list[ScoredProposal] = []

    def add_proposal(box: Box, class_id: int, quality: float, latent: np.ndarray | None):
        noise = rng.standard_normal(cfg.feat_dim)
        base = quality * latent if latent is not None else np.zeros(cfg.feat_dim)
        feat = base + (1.0 - quality) * rng.standard_normal(cfg.feat_dim) + cfg.feat_noise * noise
        s0 = cfg.score_slope * quality + cfg.score_offset + cfg.score_noise * rng.standard_normal()
        props.append(
            ScoredProposal(
                box=box,
                class_id=class_id,
                s0=float(np.clip(s0, 0.0, 1.0)),
                feat=feat,
                id=len(props),
            )
        )

    def jitter_box(b: Box) -> Box:
        bw, bh = b.x2 - b.x1, b.y2 - b.y1
        dx = cfg.jitter * bw * rng.standard_normal(2)
        dy = cfg.jitter * bh * rng.standard_normal(2)
        x1 = min(max(b.x1 + dx[0], 0.0), w - min_side)
        y1 = min(max(b.y1 + dy[0], 0.0), h - min_side)
        x2 = min(max(b.x2 + dx[1], x1 + min_side), w)
        y2 = min(max(b.y2 + dy[1], y1 + min_side), h)
        return Box(x1, y1, x2, y2)

    n_fg = 0
    for g, latent in zip(gts, latents):
        n_p = int(rng.integers(cfg.proposals_per_object[0], cfg.proposals_per_object[1] + 1))
        n_fg += n_p
        for _ in range(n_p):
            b = jitter_box(g.box)
            add_proposal(b, g.class_id, iou(b, g.box), latent)

    gt_boxes = boxes_to_array([g.box for g in gts])
    n_bg = int(round(cfg.background_rate * n_fg))
    for _ in range(n_bg):
        best_box, best_overlap = None, math.inf
        for _attempt in range(32):
            bw = rng.uniform(0.05, 0.3) * w
            bh = rng.uniform(0.05, 0.3) * h
            x1 = rng.uniform(0.0, w - bw)
            y1 = rng.uniform(0.0, h - bh)
            b = Box(x1, y1, x1 + bw, y1 + bh)
            overlap = float(iou_matrix(b.as_array()[None, :], gt_boxes).max()) if gts else 0.0
            if overlap < best_overlap:
                best_box, best_overlap = b, overlap
            if overlap < 0.3:
                break
        class_id = int(rng.integers(cfg.classes))
        same = [i for i, g in enumerate(gts) if g.class_id == class_id]
        quality = 0.0
        latent = None
        if same:
            overlaps = iou_matrix(best_box.as_array()[None, :], gt_boxes[same])[0]
            j = int(np.argmax(overlaps))
            quality = float(overlaps[j])
            latent = latents[same[j]]
        add_proposal(best_box, class_id, quality, latent)

    return Scene(image=ImageSize(w, h), gts=gts, props=props, image_id=image_id)


def generate_dataset(cfg: SynthConfig, n_scenes: int) -> list[Scene]:
    """n_scenes scenes from per-scene derived seeds, reproducible bit for bit."""
    return [
        generate_scene(cfg, np.random.default_rng([cfg.seed, i]), image_id=i)
        for i in range(n_scenes)
    ]


def split_dataset(scenes, fractions) -> list[list[Scene]]:
    """Deterministic split by hashing scene indices.

    Membership depends only on the scene index and the dataset size, so the
    same call on a regenerated dataset reproduces the same split. Fraction
    counts are rounded with the remainder going to the last part.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    order = sorted(
        range(len(scenes)),
        key=lambda i: hashlib.md5(str(i).encode("ascii")).hexdigest(),
    )
    counts = [int(round(f * len(scenes))) for f in fractions]
    counts[-1] = len(scenes) - sum(counts[:-1])
    parts = []
    at = 0
    for c in counts:
        if c < 0:
            raise ValueError(f"split fractions produce a negative part: {fractions}")
        chunk = sorted(order[at : at + c])
        parts.append([scenes[i] for i in chunk])
        at += c
    return parts


def save_dataset(path, scenes) -> None:
    """One header line plus one JSON scene per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps({"format": FORMAT}) + "\n")
        for scene in scenes:
            fh.write(json.dumps(_scene_to_obj(scene)) + "\n")


def load_dataset(path) -> list[Scene]:
    """Inverse of save_dataset; image ids are assigned by line order."""
    scenes: list[Scene] = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.strip():
            raise ValueError(f"{path}: empty file, expected a format header")
        try:
            head = json.loads(header)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:1: malformed header: {e}") from None
        if head.get("format") != FORMAT:
            raise ValueError(f"{path}: unsupported format {head.get('format')!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: malformed scene: {e}") from None
            scenes.append(_scene_from_obj(obj, image_id=len(scenes)))
    return scenes


def _scene_to_obj(scene: Scene) -> dict:
    return {
        "image": {"w": scene.image.w, "h": scene.image.h},
        "gts": [
            {"box": [g.box.x1, g.box.y1, g.box.x2, g.box.y2], "class": g.class_id}
            for g in scene.gts
        ],
        "props": [
            {
                "box": [p.box.x1, p.box.y1, p.box.x2, p.box.y2],
                "class": p.class_id,
                "s0": p.s0,
                "feat": p.feat.tolist(),
                "id": p.id,
            }
            for p in scene.props
        ],
    }


def _scene_from_obj(obj: dict, image_id: int) -> Scene:
    img = ImageSize(obj["image"]["w"], obj["image"]["h"])
    gts = [GroundTruth(Box(*g["box"]), int(g["class"])) for g in obj["gts"]]
    props = [
        ScoredProposal(
            box=Box(*p["box"]),
            class_id=int(p["class"]),
            s0=float(p["s0"]),
            feat=np.asarray(p["feat"], dtype=np.float64),
            id=int(p["id"]),
        )
        for p in obj["props"]
    ]
    return Scene(image=img, gts=gts, props=props, image_id=image_id)
