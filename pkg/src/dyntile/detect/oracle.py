"""Ground-truth oracle and constant-latency stub detectors."""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Dict, Hashable, List, Mapping, Sequence, Tuple

import numpy as np

from ..fusion import Detection
from ..tiler import BoxF, Frame, clip_annotation_to_tile, to_image_space
from .base import DetectionError, DetectorAdapter, TileRequest

# image_id -> [(original-frame box, class_id), ...]
GroundTruth = Mapping[Hashable, Sequence[Tuple[BoxF, int]]]


@dataclass(frozen=True)
class OracleConfig:
    dropout_rate: float = 0.0
    jitter_px: float = 0.0
    false_positive_rate: float = 0.0  # expected spurious boxes per tile
    rng_seed: int = 0
    # Fraction of a box that must be inside a tile for the oracle to report
    # it. High by default so edge slivers do not survive NMS as duplicates.
    min_visibility: float = 0.9

    def __post_init__(self):
        for name in ("dropout_rate", "false_positive_rate", "min_visibility"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.jitter_px < 0:
            raise ValueError("jitter_px must be >= 0")


def _image_key(image_id: Hashable) -> int:
    if isinstance(image_id, int) and image_id >= 0:
        return image_id
    return zlib.crc32(str(image_id).encode())


class OracleDetector(DetectorAdapter):
    """Reports the ground truth visible in each tile, optionally corrupted.

    Randomness is seeded per (seed, image, tile) so results do not depend on
    the order tiles are processed in.
    """

    name = "oracle"
    max_concurrent_requests = 1 << 30

    def __init__(self, ground_truth: GroundTruth, config: OracleConfig = OracleConfig()):
        self.ground_truth = ground_truth
        self.config = config
        self._classes = sorted({c for anns in ground_truth.values() for _, c in anns}) or [0]

    def _rng(self, request: TileRequest) -> np.random.Generator:
        r = request.region
        seq = [self.config.rng_seed, _image_key(request.image_id)]
        if r is not None:
            seq += [r.row, r.col, r.x_off, r.y_off]
        return np.random.default_rng(seq)

    def detect(self, request: TileRequest) -> List[Detection]:
        if request.region is None:
            raise DetectionError("oracle needs the tile region", request.tile_id)
        cfg = self.config
        rng = self._rng(request)
        region = request.region
        out = []
        for box, cls in self.ground_truth.get(request.image_id, ()):
            # draw unconditionally so one box's fate never shifts another's
            drop = rng.random()
            jit = rng.uniform(-cfg.jitter_px, cfg.jitter_px, size=4)
            clipped = clip_annotation_to_tile(to_image_space(box, request.scale_factor), region, cfg.min_visibility)
            if clipped is None or drop < cfg.dropout_rate:
                continue
            if cfg.jitter_px > 0:
                x1 = min(max(clipped.x + jit[0], 0.0), region.width)
                y1 = min(max(clipped.y + jit[1], 0.0), region.height)
                x2 = min(max(clipped.x2 + jit[2], x1), region.width)
                y2 = min(max(clipped.y2 + jit[3], y1), region.height)
                clipped = BoxF(x1, y1, x2 - x1, y2 - y1, Frame.TILE)
            out.append(Detection(clipped, 1.0, int(cls), (region.row, region.col)))
        n_fp = rng.poisson(cfg.false_positive_rate) if cfg.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            w, h = rng.uniform(4, min(64, region.width), size=2)
            x = rng.uniform(0, max(region.width - w, 0))
            y = rng.uniform(0, max(region.height - h, 0))
            cls = self._classes[rng.integers(len(self._classes))]
            out.append(Detection(BoxF(x, y, w, h, Frame.TILE), float(rng.random()), int(cls), (region.row, region.col)))
        return out


@dataclass(frozen=True)
class StubConfig:
    fixed_latency_ms: float = 0.0

    def __post_init__(self):
        if self.fixed_latency_ms < 0:
            raise ValueError("fixed_latency_ms must be >= 0")


class StubDetector(DetectorAdapter):
    """Sleeps for a fixed time and finds nothing. A throughput instrument."""

    name = "stub"
    max_concurrent_requests = 1 << 30

    def __init__(self, config: StubConfig = StubConfig()):
        self.config = config

    def detect(self, request: TileRequest) -> List[Detection]:
        deadline = time.perf_counter() + self.config.fixed_latency_ms / 1000.0
        # sleep() may wake early on some platforms; spin out the remainder
        while True:
            left = deadline - time.perf_counter()
            if left <= 0:
                return []
            time.sleep(left)
