"""Wall-clock throughput of an end-to-end per-frame pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence


@dataclass
class BenchResult:
    avg_fps: float
    frame_times_s: List[float] = field(default_factory=list)
    warmup: int = 0
    outputs: List[Any] = field(default_factory=list)

    @property
    def n_timed(self) -> int:
        return len(self.frame_times_s)


def bench_fps(
    pipeline_fn: Callable[[Any], Any],
    images: Sequence[Any],
    warmup: int = 1,
    keep_outputs: bool = False,
    prepare: Optional[Callable[[Any], Any]] = None,
) -> BenchResult:
    """Mean per-frame FPS over the images after the first ``warmup`` ones.

    ``pipeline_fn`` must do everything a deployed system would per frame
    (scaling, tiling, detection, fusion); its return values are kept only
    when ``keep_outputs`` is set. ``prepare`` (e.g. image decoding) runs
    before each frame outside the timed region.
    """
    if not images:
        raise ValueError("bench_fps needs at least one image")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if warmup >= len(images):
        raise ValueError(f"warmup={warmup} leaves no timed frames out of {len(images)}")
    times, outputs = [], []
    for i, img in enumerate(images):
        if prepare is not None:
            img = prepare(img)
        t0 = time.perf_counter()
        out = pipeline_fn(img)
        dt = time.perf_counter() - t0
        if keep_outputs:
            outputs.append(out)
        if i >= warmup:
            times.append(dt)
    fps = [1.0 / max(t, 1e-9) for t in times]
    return BenchResult(sum(fps) / len(fps), times, warmup, outputs)
