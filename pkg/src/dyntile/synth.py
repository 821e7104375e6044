"""Synthetic aerial scenes with COCO annotations.

Scenes are a flat sea-coloured background with solid bright rectangles for
objects. Box sizes are drawn per COCO size class in the original frame and
capped so that, after the pipeline's altitude scaling, every object fits in
the tile overlap band (and therefore lies wholly inside at least one tile).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .evalkit.coco import Annotation, CocoDataset, ImageRecord, save_coco
from .tiler import BoxF, Frame, write_raster


@dataclass(frozen=True)
class CameraPreset:
    name: str
    width: int
    height: int
    fov_deg: float


# capture sources resembling the fixed-wing 20M camera, the 4K quadcopter
# camera and the small multispectral RGB camera
TRINITY_20M = CameraPreset("trinity20m", 5456, 3632, 73.0)
MAVIC_4K = CameraPreset("mavic4k", 3840, 2160, 65.0)
MULTISPECTRAL = CameraPreset("multispectral", 1230, 930, 50.0)
HD = CameraPreset("hd", 1920, 1080, 65.0)
TINY = CameraPreset("tiny", 600, 450, 65.0)
PRESETS = {p.name: p for p in (TRINITY_20M, MAVIC_4K, MULTISPECTRAL, HD, TINY)}

CATEGORIES = {1: "swimmer", 2: "boat", 3: "buoy"}
BACKGROUND = (18, 52, 86)

# (min side, max side) in original pixels per COCO size class
SIDE_RANGES = {"small": (6, 30), "medium": (34, 90), "large": (100, 260)}


def _color(class_id: int) -> Tuple[int, int, int]:
    return {1: (250, 220, 40), 2: (240, 240, 240), 3: (230, 60, 50)}.get(class_id, (255, 255, 255))


def _draw_box(rng, size_class: str, max_scaled_side: float, scale: float) -> Tuple[float, float]:
    lo, hi = SIDE_RANGES[size_class]
    hi = min(hi, max_scaled_side / scale)
    lo = min(lo, hi)
    while True:
        w, h = (float(v) for v in rng.integers(int(lo), int(hi) + 1, size=2))
        area = w * h
        if size_class == "small" and area < 1024:
            return w, h
        if size_class == "medium" and 1024 <= area < 9216:
            return w, h
        if size_class == "large" and area >= 9216:
            return w, h


def make_synthetic(
    n_images: int,
    seed: int = 0,
    cameras: Sequence[CameraPreset] = (MAVIC_4K, TRINITY_20M, HD, MULTISPECTRAL, TINY),
    camera_weights: Optional[Sequence[float]] = None,
    altitude_range: Tuple[float, float] = (10.0, 250.0),
    unknown_altitude_rate: float = 0.1,
    boxes_per_image: Tuple[int, int] = (1, 10),
    scale_for=None,
    max_scaled_side: float = 120.0,
) -> CocoDataset:
    """Build a dataset in memory. Rasters come from :func:`render`.

    ``scale_for(record) -> float`` tells the generator what scale the pipeline
    will apply so boxes can be sized to fit a tile after scaling. Without it
    boxes are sized for scale 1.
    """
    rng = np.random.default_rng(seed)
    ds = CocoDataset(categories=dict(CATEGORIES))
    ann_id = 1
    weights = None
    if camera_weights is not None:
        weights = np.asarray(camera_weights, dtype=float) / np.sum(camera_weights)
    for image_id in range(1, n_images + 1):
        cam = cameras[rng.choice(len(cameras), p=weights)]
        alt = None if rng.random() < unknown_altitude_rate else float(np.round(rng.uniform(*altitude_range), 1))
        rec = ImageRecord(image_id, f"synth_{image_id:05d}.png", cam.width, cam.height, alt, cam.fov_deg,
                          {"camera": cam.name})
        ds.images[image_id] = rec
        scale = scale_for(rec) if scale_for is not None else 1.0
        margin = max(2.0, 2.0 / scale)
        placed: List[Tuple[float, float, float, float]] = []
        n = int(rng.integers(boxes_per_image[0], boxes_per_image[1] + 1))
        for _ in range(n):
            size_class = ("small", "medium", "large")[int(rng.integers(3))]
            for _attempt in range(50):
                w, h = _draw_box(rng, size_class, max_scaled_side, scale)
                if w + 2 * margin > cam.width or h + 2 * margin > cam.height:
                    break
                x = float(np.floor(rng.uniform(margin, cam.width - w - margin)))
                y = float(np.floor(rng.uniform(margin, cam.height - h - margin)))
                gap = margin
                if all(x + w + gap <= px or px + pw + gap <= x or y + h + gap <= py or py + ph + gap <= y
                       for px, py, pw, ph in placed):
                    placed.append((x, y, w, h))
                    cls = int(rng.integers(1, len(CATEGORIES) + 1))
                    ds.annotations.append(
                        Annotation(ann_id, image_id, cls, BoxF(x, y, w, h, Frame.ORIGINAL), w * h)
                    )
                    ann_id += 1
                    break
    ds.invalidate()
    return ds


def render(dataset: CocoDataset, record: ImageRecord) -> np.ndarray:
    img = np.empty((record.height, record.width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for a in dataset.annotations_for(record.id):
        b = a.box
        x0, y0 = int(round(b.x)), int(round(b.y))
        x1, y1 = int(round(b.x2)), int(round(b.y2))
        img[y0:y1, x0:x1] = _color(a.class_id)
    return img


def write_synthetic(dataset: CocoDataset, out_dir: Union[str, Path], name: str = "annotations.json") -> Path:
    """Render every image to PNG next to a COCO file; returns the JSON path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in dataset.images.values():
        write_raster(render(dataset, rec), out / rec.file_name)
    path = out / name
    save_coco(dataset, path)
    dataset.path = path
    return path
