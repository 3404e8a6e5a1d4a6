"""Sequential-context duplicate removal for object detection proposals.

Provides classical duplicate-removal baselines (NMS, Soft-NMS, box voting),
oracle selectors, a two-stage recurrent scoring model with global attention
and a context gate, a synthetic proposal benchmark, and a COCO-style mAP
evaluator.
"""

__version__ = "0.1.0"

from .geometry import Box, ImageSize, area, iou, normalize_geometric
from .suppression import GroundTruth, ScoredProposal

__all__ = [
    "Box",
    "ImageSize",
    "area",
    "iou",
    "normalize_geometric",
    "GroundTruth",
    "ScoredProposal",
]
