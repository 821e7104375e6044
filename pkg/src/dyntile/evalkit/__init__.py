from .bench import BenchResult, bench_fps
from .coco import (
    Annotation,
    CocoDataset,
    DataError,
    ImageRecord,
    detections_to_coco,
    load_coco,
    load_detections,
    parse_coco,
    save_coco,
    save_detections,
)
from .metrics import (
    COCO_IOU_THRESHOLDS,
    COCO_SIZES,
    LARGE,
    MEDIUM,
    SMALL,
    EvalAccumulator,
    EvalReport,
    SizeCategory,
    evaluate,
    interpolated_ap,
    size_counts,
)
from .reports import area_histogram, write_area_csv, write_area_svg, write_summary_csv
