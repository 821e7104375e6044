"""Altitude-aware dynamic scaling and tiling for small-object detection."""

from .fusion import Detection, FusionConfig, greedy_nms, iou, merge_tile_detections
from .pipeline import Pipeline, PipelineConfig, decide_scale, plan_for, run_dataset
from .scalelaw import (
    SCALED_V1,
    SCALED_V2,
    BinLadder,
    CameraModel,
    RecognitionSpec,
    ScalingPolicy,
    bin_for_capture,
    build_ladder,
    required_resolution,
    select_bin,
)
from .tiler import (
    BoxF,
    Frame,
    TilePlan,
    TileRegion,
    clip_annotation_to_tile,
    cut_tile,
    plan_tiles,
    remap_to_image,
    scale_raster,
)

__version__ = "0.1.0"
