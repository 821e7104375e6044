"""Per-frame pipeline: pick a bin, scale, tile, detect, fuse."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence

import numpy as np

from .detect import DetectionError, DetectorAdapter, TileRequest, detect
from .evalkit.coco import CocoDataset, DataError, ImageRecord
from .fusion import Detection, FusionConfig, merge_tile_detections
from .scalelaw import (
    SCALED_V2,
    BinLadder,
    CameraModel,
    RecognitionSpec,
    ScalingPolicy,
    bin_for_capture,
    build_ladder,
    required_resolution,
)
from .tiler import TilePlan, cut_tile, plan_tiles, scale_raster, scaled_size

log = logging.getLogger(__name__)

MODES = ("dynamic", "static", "notile")


@dataclass(frozen=True)
class PipelineConfig:
    ladder: BinLadder = field(default_factory=lambda: build_ladder(640, 0.8, 6))
    policy: ScalingPolicy = SCALED_V2
    spec: RecognitionSpec = RecognitionSpec()
    overlap: float = 0.2
    fusion: FusionConfig = FusionConfig()
    # dynamic: altitude-aware scaling + tiling; static: tile the native frame;
    # notile: shrink the frame to the base tile size and detect once
    mode: str = "dynamic"
    default_fov_deg: float = 65.0
    on_error: str = "abort"  # or "skip"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.on_error not in ("abort", "skip"):
            raise ValueError(f"on_error must be 'abort' or 'skip', got {self.on_error!r}")
        self.policy.validate_for(self.ladder)

    @property
    def tile_size(self) -> int:
        return self.ladder.tile_size_px


@dataclass
class ScaleDecision:
    image_id: Hashable
    native_w: int
    native_h: int
    altitude_m: Optional[float]
    fov_deg: float
    p_hat: Optional[int]
    target_long_side: int
    scale_factor: float
    scaled_w: int
    scaled_h: int

    def to_dict(self) -> dict:
        return asdict(self)


def decide_scale(record: ImageRecord, cfg: PipelineConfig, native_w: Optional[int] = None, native_h: Optional[int] = None) -> ScaleDecision:
    w = native_w if native_w is not None else record.width
    h = native_h if native_h is not None else record.height
    fov = record.fov_deg if record.fov_deg is not None else cfg.default_fov_deg
    alt = record.altitude_m
    p_hat = required_resolution(alt, fov, cfg.spec) if alt is not None else None
    native_long = max(w, h)
    if cfg.mode == "dynamic":
        target = bin_for_capture(CameraModel(alt, fov, w, h), cfg.spec, cfg.policy, cfg.ladder)
    elif cfg.mode == "static":
        target = native_long
    else:
        target = min(cfg.tile_size, native_long)
    sw, sh, scale = scaled_size(w, h, target)
    return ScaleDecision(record.id, w, h, alt, fov, p_hat, target, scale, sw, sh)


def plan_for(decision: ScaleDecision, cfg: PipelineConfig) -> TilePlan:
    if cfg.mode == "notile":
        n = max(decision.scaled_w, decision.scaled_h)
        return plan_tiles(decision.scaled_w, decision.scaled_h, n, 0.0)
    return plan_tiles(decision.scaled_w, decision.scaled_h, cfg.tile_size, cfg.overlap)


@dataclass
class FrameResult:
    image_id: Hashable
    detections: List[Detection]
    decision: ScaleDecision
    n_tiles: int
    skipped_tiles: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def log_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "n_tiles": self.n_tiles,
            "n_detections": len(self.detections),
            "target_long_side": self.decision.target_long_side,
            "scale_factor": self.decision.scale_factor,
            "skipped_tiles": self.skipped_tiles,
            **{f"{k}_s": v for k, v in self.timings.items()},
        }


class Pipeline:
    def __init__(self, cfg: PipelineConfig, adapter: DetectorAdapter):
        self.cfg = cfg
        self.adapter = adapter

    def process(self, record: ImageRecord, raster: np.ndarray) -> FrameResult:
        t0 = time.perf_counter()
        h, w = raster.shape[:2]
        if (w, h) != (record.width, record.height):
            raise DataError(f"image {record.id!r}: raster is {w}x{h}, record says {record.width}x{record.height}")
        decision = decide_scale(record, self.cfg, w, h)
        if decision.target_long_side == max(w, h):
            scaled = raster
        else:
            scaled, _ = scale_raster(raster, decision.target_long_side)
        plan = plan_for(decision, self.cfg)
        t1 = time.perf_counter()

        per_tile, skipped = [], []
        for region in plan.tiles:
            req = TileRequest(cut_tile(scaled, region), record.id, region, decision.scale_factor)
            try:
                per_tile.append((region, detect(self.adapter, req)))
            except DetectionError as e:
                if self.cfg.on_error == "abort":
                    raise
                log.warning("skipping tile: %s", e)
                skipped.append(req.tile_id)
        t2 = time.perf_counter()
        dets = merge_tile_detections(per_tile, decision.scale_factor, self.cfg.fusion)
        t3 = time.perf_counter()
        timings = {"scale": t1 - t0, "detect": t2 - t1, "fuse": t3 - t2, "total": t3 - t0}
        return FrameResult(record.id, dets, decision, len(plan.tiles), skipped, timings)


@dataclass
class RunResult:
    frames: List[FrameResult]
    workers: int

    @property
    def detections(self) -> Dict[Hashable, List[Detection]]:
        return {f.image_id: f.detections for f in self.frames}

    @property
    def total_tiles(self) -> int:
        return sum(f.n_tiles for f in self.frames)


RasterLoader = Callable[[ImageRecord], np.ndarray]


def run_dataset(
    dataset: CocoDataset,
    cfg: PipelineConfig,
    adapter_factory: Callable[[], DetectorAdapter],
    load_raster: RasterLoader,
    workers: int = 1,
    image_ids: Optional[Sequence[Hashable]] = None,
) -> RunResult:
    """Process images on a pool; each worker thread owns one adapter.

    Results come back in dataset order whatever the pool size.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    ids = list(image_ids) if image_ids is not None else list(dataset.images)
    local = threading.local()
    adapters: List[DetectorAdapter] = []
    lock = threading.Lock()

    def pipeline() -> Pipeline:
        p = getattr(local, "pipeline", None)
        if p is None:
            adapter = adapter_factory()
            with lock:
                adapters.append(adapter)
            p = local.pipeline = Pipeline(cfg, adapter)
        return p

    def one(image_id):
        rec = dataset.images[image_id]
        return pipeline().process(rec, load_raster(rec))

    try:
        if workers == 1:
            frames = [one(i) for i in ids]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                frames = list(pool.map(one, ids))
    finally:
        for a in {id(a): a for a in adapters}.values():
            a.close()
    return RunResult(frames, workers)
