"""Merge per-tile detections into one set of original-frame detections."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .tiler import BoxF, Frame, TileRegion, remap_to_image


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    box: BoxF
    score: float
    class_id: int
    source_tile: Optional[Tuple[int, int]] = None  # (row, col)

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise FusionError(f"score {self.score} outside [0, 1]")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise FusionError(f"class_id must be a non-negative int, got {self.class_id!r}")


@dataclass(frozen=True)
class FusionConfig:
    match_iou_threshold: float = 0.5  # T_m
    confidence_threshold: float = 0.25  # T_d

    def __post_init__(self):
        for name in ("match_iou_threshold", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise FusionError(f"{name} must be in [0, 1], got {v}")


def iou(a: BoxF, b: BoxF) -> float:
    if a.frame is not b.frame:
        raise FusionError(f"IoU across frames: {a.frame.value} vs {b.frame.value}")
    if a.area <= 0 or b.area <= 0:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one xyxy box against an (n, 4) xyxy array."""
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area_a + area_b - inter
    out = np.zeros_like(inter)
    ok = (union > 0) & (area_a > 0) & (area_b > 0)
    out[ok] = inter[ok] / union[ok]
    return out


def nms_order(dets: Sequence[Detection]) -> List[int]:
    """Indices by score desc, then area desc, then input position."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, -dets[i].box.area, i))


def greedy_nms(dets: Sequence[Detection], T_m: float) -> List[Detection]:
    """Class-aware hard NMS.

    A detection survives iff its IoU with every higher-ranked survivor of the
    same class is <= ``T_m``. Output keeps the ranking order.
    """
    if not dets:
        return []
    frames = {d.box.frame for d in dets}
    if len(frames) > 1:
        raise FusionError(f"detections span several frames: {sorted(f.value for f in frames)}")
    order = nms_order(dets)
    kept: List[int] = []
    kept_xyxy = {}  # class_id -> list of xyxy rows
    for i in order:
        d = dets[i]
        row = np.array([d.box.x, d.box.y, d.box.x2, d.box.y2], dtype=np.float64)
        same = kept_xyxy.get(d.class_id)
        if same and (_iou_one_to_many(row, np.asarray(same)) > T_m).any():
            continue
        kept.append(i)
        kept_xyxy.setdefault(d.class_id, []).append(row)
    return [dets[i] for i in kept]


def merge_tile_detections(
    per_tile: Iterable[Tuple[TileRegion, Sequence[Detection]]],
    scale_factor: float,
    cfg: FusionConfig = FusionConfig(),
) -> List[Detection]:
    """Threshold, remap to the original frame, then NMS."""
    remapped = []
    for region, dets in per_tile:
        for d in dets:
            if d.score < cfg.confidence_threshold:
                continue
            box = remap_to_image(d.box, region, scale_factor)
            remapped.append(replace(d, box=box, source_tile=(region.row, region.col)))
    return greedy_nms(remapped, cfg.match_iou_threshold)
