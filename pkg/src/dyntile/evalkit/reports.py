"""CSV summaries and static figures for evaluation runs."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from .coco import Annotation
from .metrics import COCO_SIZES, CSV_COLUMNS, EvalReport, SizeCategory, size_counts

AREA_BIN_EDGES = (0, 256, 1024, 4096, 9216, 16384, 65536, float("inf"))


def write_summary_csv(reports: Iterable[EvalReport], path: Union[str, Path]) -> None:
    """One row per setup, columns laid out like a results table."""
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.csv_row())


def area_histogram(annotations: Sequence[Annotation], edges: Sequence[float] = AREA_BIN_EDGES) -> List[int]:
    """Counts of non-crowd annotation areas in ``[edges[i], edges[i+1])``."""
    areas = np.array([a.area_px2 for a in annotations if not a.iscrowd], dtype=np.float64)
    counts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        counts.append(int(((areas >= lo) & (areas < hi)).sum()))
    return counts


def _edge_label(v: float) -> str:
    return "inf" if v == float("inf") else str(int(v))


def write_area_csv(
    annotations: Sequence[Annotation],
    path: Union[str, Path],
    edges: Sequence[float] = AREA_BIN_EDGES,
    sizes: Sequence[SizeCategory] = COCO_SIZES,
) -> Dict[str, object]:
    hist = area_histogram(annotations, edges)
    counts = size_counts(annotations, sizes)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "bin", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], hist):
            w.writerow(["area", f"{_edge_label(lo)}-{_edge_label(hi)}", c])
        for name, c in counts.items():
            w.writerow(["size", name, c])
    return {"histogram": hist, "sizes": counts}


def write_area_svg(
    annotations: Sequence[Annotation],
    path: Union[str, Path],
    title: str = "",
    sizes: Sequence[SizeCategory] = COCO_SIZES,
) -> None:
    """Area histogram (log-spaced) above a per-size count bar chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps generated element ids stable between runs
    matplotlib.rcParams["svg.hashsalt"] = "dyntile"

    areas = np.array([a.area_px2 for a in annotations if not a.iscrowd], dtype=np.float64)
    counts = size_counts(annotations, sizes)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 6))
    pos = areas[areas > 0]
    if len(pos):
        bins = np.logspace(np.log10(pos.min()), np.log10(pos.max()) + 1e-9, 30)
        ax1.hist(pos, bins=bins)
        ax1.set_xscale("log")
    for s in sizes[1:]:
        ax1.axvline(s.min_area, color="k", linestyle="--", linewidth=0.8)
    ax1.set_xlabel("annotation area (px^2)")
    ax1.set_ylabel("count")
    ax1.set_title(title or "annotation areas")
    ax2.bar(list(counts), list(counts.values()))
    ax2.set_ylabel("annotations")
    fig.tight_layout()
    # fixed metadata keeps the file stable between runs
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
