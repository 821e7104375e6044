"""COCO-style average precision with a per-size breakdown.

Matching follows the COCO protocol: per image and class, detections are
visited in descending score order and each takes the unmatched ground truth
with the highest IoU at or above the threshold. Crowd boxes and boxes outside
the current size range are ignore regions. AP is the 101-point interpolated
area under the precision envelope.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..fusion import Detection
from ..tiler import Frame
from .coco import Annotation, CocoDataset, DataError

COCO_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class SizeCategory:
    name: str
    min_area: float
    max_area: float  # exclusive

    def contains(self, area: float) -> bool:
        return self.min_area <= area < self.max_area


SMALL = SizeCategory("small", 0.0, 32.0 ** 2)
MEDIUM = SizeCategory("medium", 32.0 ** 2, 96.0 ** 2)
LARGE = SizeCategory("large", 96.0 ** 2, float("inf"))
COCO_SIZES = (SMALL, MEDIUM, LARGE)
ALL = SizeCategory("all", 0.0, float("inf"))


def size_counts(annotations: Sequence[Annotation], sizes: Sequence[SizeCategory] = COCO_SIZES) -> Dict[str, int]:
    counts = {s.name: 0 for s in sizes}
    for a in annotations:
        if a.iscrowd:
            continue
        for s in sizes:
            if s.contains(a.area_px2):
                counts[s.name] += 1
                break
    return counts


def iou_matrix(dets: np.ndarray, gts: np.ndarray, crowd: np.ndarray) -> np.ndarray:
    """IoU between xywh rows; crowd columns use the detection area as the union."""
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)))
    d = dets[:, None, :]
    g = gts[None, :, :]
    iw = np.minimum(d[..., 0] + d[..., 2], g[..., 0] + g[..., 2]) - np.maximum(d[..., 0], g[..., 0])
    ih = np.minimum(d[..., 1] + d[..., 3], g[..., 1] + g[..., 3]) - np.maximum(d[..., 1], g[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    da = d[..., 2] * d[..., 3]
    ga = g[..., 2] * g[..., 3]
    union = np.where(crowd[None, :], da, da + ga - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def interpolated_ap(tp: np.ndarray, fp: np.ndarray, n_gt: int) -> float:
    """101-point AP from score-ordered TP/FP flags."""
    if n_gt == 0:
        return -1.0
    tpc = np.cumsum(tp, dtype=np.float64)
    fpc = np.cumsum(fp, dtype=np.float64)
    if len(tpc) == 0:
        return 0.0
    recall = tpc / n_gt
    precision = tpc / np.maximum(tpc + fpc, np.spacing(1))
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    valid = idx < len(precision)
    q = np.zeros(len(RECALL_POINTS))
    q[valid] = precision[idx[valid]]
    return float(q.mean())


@dataclass
class _Bucket:
    """Per (class, size range) matching results over many images."""

    scores: List[np.ndarray] = field(default_factory=list)
    matched: List[np.ndarray] = field(default_factory=list)  # (T, n) bool
    ignored: List[np.ndarray] = field(default_factory=list)  # (T, n) bool
    n_gt: int = 0

    def extend(self, other: "_Bucket") -> None:
        self.scores += other.scores
        self.matched += other.matched
        self.ignored += other.ignored
        self.n_gt += other.n_gt

    def ap(self, t_index: int) -> float:
        if self.n_gt == 0:
            return -1.0
        if not self.scores:
            return 0.0
        scores = np.concatenate(self.scores)
        order = np.argsort(-scores, kind="mergesort")
        m = np.concatenate([a[t_index] for a in self.matched])[order]
        ig = np.concatenate([a[t_index] for a in self.ignored])[order]
        return interpolated_ap(m & ~ig, ~m & ~ig, self.n_gt)


def match_image(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    gt_boxes: np.ndarray,
    gt_crowd: np.ndarray,
    gt_area: np.ndarray,
    size: SizeCategory,
    thresholds: Sequence[float],
    max_dets: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Match one image/class; returns (scores, matched[T,n], ignored[T,n], n_gt)."""
    order = np.argsort(-det_scores, kind="mergesort")[:max_dets]
    det_boxes, det_scores = det_boxes[order], det_scores[order]
    gt_ignore = gt_crowd | ~np.array([size.contains(a) for a in gt_area], dtype=bool)
    gorder = np.argsort(gt_ignore, kind="mergesort")  # regular boxes first
    gt_boxes, gt_crowd, gt_ignore = gt_boxes[gorder], gt_crowd[gorder], gt_ignore[gorder]
    ious = iou_matrix(det_boxes, gt_boxes, gt_crowd)

    T, D, G = len(thresholds), len(det_boxes), len(gt_boxes)
    matched = np.zeros((T, D), dtype=bool)
    ignored = np.zeros((T, D), dtype=bool)
    for ti, t in enumerate(thresholds):
        gt_taken = np.zeros(G, dtype=bool)
        for di in range(D):
            best, best_iou = -1, min(t, 1 - 1e-10)
            for gi in range(G):
                if gt_taken[gi] and not gt_crowd[gi]:
                    continue
                # once a regular match is found, ignored boxes cannot replace it
                if best > -1 and not gt_ignore[best] and gt_ignore[gi]:
                    break
                if ious[di, gi] < best_iou:
                    continue
                best, best_iou = gi, ious[di, gi]
            if best == -1:
                continue
            matched[ti, di] = True
            ignored[ti, di] = gt_ignore[best]
            gt_taken[best] = True
    det_area = det_boxes[:, 2] * det_boxes[:, 3] if D else np.zeros(0)
    outside = ~np.array([size.contains(a) for a in det_area], dtype=bool)
    ignored |= ~matched & outside[None, :]
    return det_scores, matched, ignored, int((~gt_ignore).sum())


@dataclass
class EvalReport:
    map_5095: float
    map50: float
    map50_by_size: Dict[str, Optional[float]]
    map_by_size: Dict[str, Optional[float]]
    per_class: Dict[int, dict]
    n_detections: int
    n_gt: int
    n_gt_by_size: Dict[str, int]
    iou_thresholds: List[float]
    avg_fps: Optional[float] = None
    frame_times_s: List[float] = field(default_factory=list)
    setup: str = ""
    workers: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> dict:
        def fmt(v):
            return "" if v is None else f"{v:.4f}"

        return {
            "setup": self.setup,
            "map": fmt(self.map_5095),
            "map50": fmt(self.map50),
            "map50_small": fmt(self.map50_by_size.get("small")),
            "map50_medium": fmt(self.map50_by_size.get("medium")),
            "map50_large": fmt(self.map50_by_size.get("large")),
            "fps": "" if self.avg_fps is None else f"{self.avg_fps:.3f}",
        }


CSV_COLUMNS = ("setup", "map", "map50", "map50_small", "map50_medium", "map50_large", "fps")


def _mean_valid(values) -> Optional[float]:
    v = [x for x in values if x > -1]
    return float(np.mean(v)) if v else None


class EvalAccumulator:
    """Collects per-image matches; partial accumulators can be merged."""

    def __init__(
        self,
        class_ids: Sequence[int],
        iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
        size_bins: Sequence[SizeCategory] = COCO_SIZES,
        max_dets: int = 100,
        class_names: Optional[Mapping[int, str]] = None,
    ):
        self.class_ids = sorted(set(int(c) for c in class_ids))
        self.thresholds = tuple(float(t) for t in iou_thresholds)
        if not self.thresholds:
            raise ValueError("need at least one IoU threshold")
        self.sizes = (ALL,) + tuple(size_bins)
        self.max_dets = max_dets
        self.class_names = dict(class_names or {})
        self.buckets: Dict[Tuple[int, str], _Bucket] = defaultdict(_Bucket)
        self.n_detections = 0
        self.gt_counts = {s.name: 0 for s in size_bins}
        self.n_gt = 0

    def add_image(self, detections: Sequence[Detection], annotations: Sequence[Annotation]) -> None:
        for d in detections:
            if d.box.frame is not Frame.ORIGINAL:
                raise DataError(f"detections must be in the original frame, got {d.box.frame.value}")
        self.n_detections += len(detections)
        sc = size_counts(annotations, self.sizes[1:])
        for k, v in sc.items():
            self.gt_counts[k] += v
        self.n_gt += sum(1 for a in annotations if not a.iscrowd)
        for cls in self.class_ids:
            cd = [d for d in detections if d.class_id == cls]
            ca = [a for a in annotations if a.class_id == cls]
            if not cd and not ca:
                continue
            db = np.array([d.box.as_xywh() for d in cd], dtype=np.float64).reshape(-1, 4)
            ds = np.array([d.score for d in cd], dtype=np.float64)
            gb = np.array([a.box.as_xywh() for a in ca], dtype=np.float64).reshape(-1, 4)
            gc = np.array([a.iscrowd for a in ca], dtype=bool)
            ga = np.array([a.area_px2 for a in ca], dtype=np.float64)
            for size in self.sizes:
                s, m, ig, n = match_image(db, ds, gb, gc, ga, size, self.thresholds, self.max_dets)
                b = self.buckets[(cls, size.name)]
                b.scores.append(s)
                b.matched.append(m)
                b.ignored.append(ig)
                b.n_gt += n

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        if (other.class_ids, other.thresholds, other.sizes) != (self.class_ids, self.thresholds, self.sizes):
            raise ValueError("cannot merge accumulators with different settings")
        for key, b in other.buckets.items():
            self.buckets[key].extend(b)
        self.n_detections += other.n_detections
        self.n_gt += other.n_gt
        for k, v in other.gt_counts.items():
            self.gt_counts[k] += v
        return self

    def _ap(self, cls: int, size: str, t_index: int) -> float:
        b = self.buckets.get((cls, size))
        return -1.0 if b is None else b.ap(t_index)

    def _t50(self) -> Optional[int]:
        for i, t in enumerate(self.thresholds):
            if abs(t - 0.5) < 1e-9:
                return i
        return None

    def summarize(self, setup: str = "") -> EvalReport:
        T = len(self.thresholds)
        t50 = self._t50()
        grid = {
            (c, s.name): [self._ap(c, s.name, t) for t in range(T)]
            for c in self.class_ids
            for s in self.sizes
        }
        map_all = _mean_valid(v for c in self.class_ids for v in grid[(c, "all")])
        map50 = _mean_valid(grid[(c, "all")][t50] for c in self.class_ids) if t50 is not None else None
        by_size50, by_size = {}, {}
        for s in self.sizes[1:]:
            by_size[s.name] = _mean_valid(v for c in self.class_ids for v in grid[(c, s.name)])
            by_size50[s.name] = (
                _mean_valid(grid[(c, s.name)][t50] for c in self.class_ids) if t50 is not None else None
            )
        per_class = {}
        for c in self.class_ids:
            row = grid[(c, "all")]
            b = self.buckets.get((c, "all"))
            per_class[c] = {
                "name": self.class_names.get(c, str(c)),
                "ap": _mean_valid(row),
                "ap50": (row[t50] if row[t50] > -1 else None) if t50 is not None else None,
                "n_gt": b.n_gt if b else 0,
            }
        return EvalReport(
            map_5095=map_all if map_all is not None else 0.0,
            map50=map50 if map50 is not None else 0.0,
            map50_by_size=by_size50,
            map_by_size=by_size,
            per_class=per_class,
            n_detections=self.n_detections,
            n_gt=self.n_gt,
            n_gt_by_size=dict(self.gt_counts),
            iou_thresholds=list(self.thresholds),
            setup=setup,
        )


def evaluate(
    detections: Mapping[Hashable, Sequence[Detection]],
    dataset: CocoDataset,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    size_bins: Sequence[SizeCategory] = COCO_SIZES,
    max_dets: int = 100,
    setup: str = "",
) -> EvalReport:
    """Score detections (original frame) against a dataset's annotations."""
    unknown = [i for i in detections if i not in dataset.images]
    if unknown:
        raise DataError(f"detections reference unknown image ids: {unknown[:5]!r}")
    classes = set(dataset.categories) | {a.class_id for a in dataset.annotations}
    classes |= {d.class_id for ds in detections.values() for d in ds}
    acc = EvalAccumulator(classes, iou_thresholds, size_bins, max_dets, dataset.categories)
    for image_id in dataset.images:
        acc.add_image(detections.get(image_id, ()), dataset.annotations_for(image_id))
    return acc.summarize(setup)
