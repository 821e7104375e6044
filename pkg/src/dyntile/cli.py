"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 adapter error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import synth
from .config import ConfigError, RunConfig, load_config
from .detect import DetectionError
from .evalkit import (
    Annotation,
    CocoDataset,
    DataError,
    ImageRecord,
    bench_fps,
    evaluate,
    load_coco,
    load_detections,
    save_coco,
    save_detections,
    write_area_csv,
    write_area_svg,
    write_summary_csv,
)
from .evalkit.metrics import EvalReport
from .pipeline import Pipeline, decide_scale, plan_for, run_dataset
from .scalelaw import ScaleLawError, build_ladder, RecognitionSpec, resolution_table
from .tiler import (
    BoxF,
    Frame,
    TilingError,
    clip_annotation_to_tile,
    cut_tile,
    grid_plan,
    read_raster,
    scale_raster,
    to_image_space,
    write_raster,
)

log = logging.getLogger("dyntile")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ADAPTER = 0, 1, 2, 3
TABLE_ALTITUDES = (10, 20, 30, 240, 250)
TABLE_FOVS = (73, 65, 50)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _floats(text: Optional[str]) -> Optional[List[float]]:
    """'10,20,30' or 'start:stop:step' (stop inclusive); '' is an empty list."""
    if text is None:
        return None
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad sweep {text!r}; use start:stop:step")
        try:
            start, stop, step = map(float, parts)
        except ValueError as e:
            raise UsageError(f"bad sweep {text!r}") from e
        if step <= 0:
            raise UsageError("sweep step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 9) for i in range(max(n, 0))]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad number list {text!r}") from e


def _fmt_num(v: float):
    return int(v) if float(v).is_integer() else v


def _require_dataset(cfg: RunConfig) -> CocoDataset:
    if not cfg.dataset:
        raise UsageError("--dataset is required")
    return load_coco(cfg.dataset)


def _image_loader(cfg: RunConfig, ds: CocoDataset):
    root = Path(cfg.images_dir) if cfg.images_dir else ds.image_dir

    def load(rec: ImageRecord) -> np.ndarray:
        path = root / rec.file_name
        if not path.exists():
            raise DataError(f"image {rec.id!r}: file {path} not found")
        try:
            return read_raster(path)
        except OSError as e:
            raise DataError(f"image {rec.id!r}: cannot read {path}: {e}") from e

    return load


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup_name(cfg: RunConfig) -> str:
    if cfg.setup:
        return cfg.setup
    return Path(cfg.policy).stem if cfg.mode == "dynamic" else cfg.mode


# --------------------------------------------------------------------------
# plan
# --------------------------------------------------------------------------


def cmd_plan(cfg: RunConfig, altitudes: Optional[str], fovs: Optional[str]) -> List[dict]:
    alts = _floats(altitudes)
    fvs = _floats(fovs)
    alts = list(TABLE_ALTITUDES) if alts is None else alts
    fvs = list(TABLE_FOVS) if fvs is None else fvs
    ladder = build_ladder(cfg.tile_size, cfg.stride, cfg.bin_count)
    rows = resolution_table(alts, fvs, RecognitionSpec(cfg.rec, cfg.obj), ladder, cfg.overlap)
    out = [
        {
            "altitude_m": _fmt_num(r.altitude_m),
            "fov_deg": _fmt_num(r.fov_deg),
            "p_hat": r.p_hat,
            "bin_px": r.bin_px,
            "tiles_per_dim": r.tiles_per_dim,
        }
        for r in rows
    ]
    return out


def _print_table(rows: List[dict], file=None) -> None:
    file = file if file is not None else sys.stdout
    cols = ["altitude_m", "fov_deg", "p_hat", "bin_px", "tiles_per_dim"]
    w = csv.DictWriter(file, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


# --------------------------------------------------------------------------
# prepare-train
# --------------------------------------------------------------------------


def cmd_prepare_train(cfg: RunConfig, load_raster=None) -> CocoDataset:
    """Cut every image into an n x n grid and keep mostly object-bearing tiles.

    All tiles with at least one annotation are kept; tiles without objects
    are admitted (seeded random choice) only while object tiles make up at
    least ``train_object_fraction`` of the output.
    """
    ds = _require_dataset(cfg)
    load_raster = load_raster or _image_loader(cfg, ds)
    out = _out_dir(cfg)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    n = cfg.train_tiles_per_dim
    if not ds.images:
        log.warning("empty dataset: nothing to tile")

    candidates = []  # (record, region, [(ann, tile box)])
    for rec in ds.images.values():
        plan = grid_plan(rec.width, rec.height, n, n)
        anns = [a for a in ds.annotations_for(rec.id) if not a.iscrowd]
        for region in plan.tiles:
            kept = []
            for a in anns:
                clipped = clip_annotation_to_tile(to_image_space(a.box, 1.0), region, cfg.min_visibility)
                if clipped is not None:
                    kept.append((a, clipped))
            candidates.append((rec, region, kept))

    with_obj = [c for c in candidates if c[2]]
    empty = [c for c in candidates if not c[2]]
    f = cfg.train_object_fraction
    max_empty = int(math.floor(len(with_obj) * (1 - f) / f + 1e-9))
    rng = np.random.default_rng(cfg.seed)
    chosen = sorted(rng.choice(len(empty), size=min(max_empty, len(empty)), replace=False).tolist()) if empty else []
    keep_ids = {id(c) for c in with_obj} | {id(empty[i]) for i in chosen}
    keep = [c for c in candidates if id(c) in keep_ids]

    tiled = CocoDataset(categories=dict(ds.categories))
    ann_id = 1
    cache_id, cache_img = None, None
    for tile_id, (rec, region, kept) in enumerate(keep, start=1):
        if cache_id != rec.id:
            cache_id, cache_img = rec.id, load_raster(rec)
        stem = Path(rec.file_name).stem or f"img{rec.id}"
        name = f"{stem}_r{region.row}c{region.col}.png"
        write_raster(cut_tile(cache_img, region), img_dir / name)
        tiled.images[tile_id] = ImageRecord(
            tile_id, f"images/{name}", region.width, region.height, rec.altitude_m, rec.fov_deg,
            {"source_image_id": rec.id, "tile": [region.x_off, region.y_off, region.width, region.height]},
        )
        for a, b in kept:
            box = BoxF(b.x, b.y, b.w, b.h, Frame.ORIGINAL)
            tiled.annotations.append(Annotation(ann_id, tile_id, a.class_id, box, box.area))
            ann_id += 1
    tiled.invalidate()
    save_coco(tiled, out / "annotations.json")
    log.info("prepare-train: %d tiles kept (%d with objects) from %d images", len(keep), len(with_obj), len(ds.images))
    return tiled


# --------------------------------------------------------------------------
# scale-test
# --------------------------------------------------------------------------

MANIFEST_COLUMNS = (
    "image_id", "file_name", "altitude_m", "fov_deg", "p_hat", "bin_px", "scale_factor",
    "native_w", "native_h", "scaled_w", "scaled_h",
)


def cmd_scale_test(cfg: RunConfig, load_raster=None) -> List[dict]:
    """Write the altitude-scaled copy of a dataset plus a manifest."""
    ds = _require_dataset(cfg)
    load_raster = load_raster or _image_loader(cfg, ds)
    pcfg = cfg.pipeline_config()
    out = _out_dir(cfg)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    scaled_ds = CocoDataset(categories=dict(ds.categories), info={"policy": pcfg.policy.to_dict()})
    manifest = []
    for rec in ds.images.values():
        d = decide_scale(rec, pcfg)
        img = load_raster(rec)
        if d.target_long_side != max(img.shape[:2]):
            img, _ = scale_raster(img, d.target_long_side)
        name = Path(rec.file_name).name or f"img{rec.id}.png"
        write_raster(img, img_dir / name)
        scaled_ds.images[rec.id] = ImageRecord(
            rec.id, f"images/{name}", d.scaled_w, d.scaled_h, rec.altitude_m, rec.fov_deg,
            {k: v for k, v in rec.extra.items() if k != "meta"} | {"scale_factor": d.scale_factor},
        )
        for a in ds.annotations_for(rec.id):
            box = a.box.scaled(d.scale_factor, Frame.ORIGINAL)
            scaled_ds.annotations.append(
                Annotation(a.id, a.image_id, a.class_id, box, a.area_px2 * d.scale_factor ** 2, a.iscrowd)
            )
        manifest.append({
            "image_id": rec.id,
            "file_name": rec.file_name,
            "altitude_m": d.altitude_m,
            "fov_deg": d.fov_deg,
            "p_hat": d.p_hat,
            "bin_px": d.target_long_side,
            "scale_factor": d.scale_factor,
            "native_w": d.native_w,
            "native_h": d.native_h,
            "scaled_w": d.scaled_w,
            "scaled_h": d.scaled_h,
        })
    scaled_ds.invalidate()
    save_coco(scaled_ds, out / "annotations.json")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS)
        w.writeheader()
        for row in manifest:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return manifest


# --------------------------------------------------------------------------
# run / eval / bench / report
# --------------------------------------------------------------------------


def cmd_run(cfg: RunConfig, load_raster=None, dataset: Optional[CocoDataset] = None):
    ds = dataset if dataset is not None else _require_dataset(cfg)
    load_raster = load_raster or _image_loader(cfg, ds)
    pcfg = cfg.pipeline_config()
    result = run_dataset(ds, pcfg, cfg.adapter_factory(ds.ground_truth()), load_raster, cfg.workers)
    out = _out_dir(cfg)
    save_detections(result.detections, out / "detections.json")
    with open(out / "timing.jsonl", "w") as f:
        for fr in result.frames:
            f.write(json.dumps(fr.log_record()) + "\n")
    summary = {
        "setup": _setup_name(cfg),
        "images": len(result.frames),
        "total_tiles": result.total_tiles,
        "workers": result.workers,
        "config": cfg.to_dict(),
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2))
    return result


def cmd_eval(cfg: RunConfig, detections_path: str) -> EvalReport:
    ds = _require_dataset(cfg)
    dets = load_detections(detections_path, ds)
    report = evaluate(dets, ds, setup=_setup_name(cfg))
    out = _out_dir(cfg)
    (out / "report.json").write_text(report.to_json())
    write_summary_csv([report], out / "summary.csv")
    return report


def cmd_bench(cfg: RunConfig, warmup: int = 1, load_raster=None, workers_given: bool = False) -> EvalReport:
    """Timed run plus evaluation; FPS is end-to-end per original frame.

    Serial unless ``--workers`` is given explicitly. With a pool, FPS is
    frames over wall-clock time and the per-frame times are latencies.
    """
    ds = _require_dataset(cfg)
    load_raster = load_raster or _image_loader(cfg, ds)
    if not workers_given:
        cfg.workers = 1
    records = list(ds.images.values())
    if not records:
        raise DataError("bench needs at least one image")
    pcfg = cfg.pipeline_config()
    factory = cfg.adapter_factory(ds.ground_truth())
    if cfg.workers == 1:
        adapter = factory()
        try:
            pipe = Pipeline(pcfg, adapter)
            res = bench_fps(
                lambda item: pipe.process(*item),
                records,
                warmup=min(warmup, len(records) - 1),
                keep_outputs=True,
                prepare=lambda rec: (rec, load_raster(rec)),
            )
        finally:
            adapter.close()
        dets = {fr.image_id: fr.detections for fr in res.outputs}
        fps, times = res.avg_fps, res.frame_times_s
    else:
        t0 = time.perf_counter()
        run = run_dataset(ds, pcfg, factory, load_raster, cfg.workers)
        wall = time.perf_counter() - t0
        dets = run.detections
        fps, times = len(run.frames) / wall, [fr.timings["total"] for fr in run.frames]
    report = evaluate(dets, ds, setup=_setup_name(cfg))
    report.avg_fps = fps
    report.frame_times_s = times
    report.workers = cfg.workers
    out = _out_dir(cfg)
    save_detections(dets, out / "detections.json")
    (out / "report.json").write_text(report.to_json())
    write_summary_csv([report], out / "summary.csv")
    return report


def cmd_report(cfg: RunConfig, reports: Sequence[str], compare: Sequence[str]) -> dict:
    out = _out_dir(cfg)
    loaded = []
    for p in reports:
        try:
            d = json.loads(Path(p).read_text())
            loaded.append(EvalReport(**{k: d[k] for k in EvalReport.__dataclass_fields__ if k in d}))
        except (OSError, json.JSONDecodeError, TypeError) as e:
            raise DataError(f"cannot read report {p}: {e}") from e
    if loaded:
        write_summary_csv(loaded, out / "summary.csv")
    paths = ([cfg.dataset] if cfg.dataset else []) + list(compare)
    figures = {}
    for p in paths:
        ds = load_coco(p)
        stem = Path(p).parent.name + "_" + Path(p).stem if Path(p).parent.name else Path(p).stem
        figures[stem] = write_area_csv(ds.annotations, out / f"{stem}_areas.csv")
        write_area_svg(ds.annotations, out / f"{stem}_areas.svg", title=stem)
    return figures


def cmd_synth(cfg: RunConfig, n_images: int) -> Path:
    pcfg = cfg.pipeline_config()
    ds = synth.make_synthetic(n_images, seed=cfg.seed, scale_for=lambda r: decide_scale(r, pcfg).scale_factor)
    return synth.write_synthetic(ds, _out_dir(cfg))


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

_OVERRIDES = {
    "dataset": "dataset", "out": "out", "policy": "policy", "adapter": "adapter",
    "adapter_cmd": "adapter_cmd", "workers": "workers", "seed": "seed", "mode": "mode",
    "images_dir": "images_dir", "setup": "setup", "tile_size": "tile_size", "stride": "stride",
    "bin_count": "bin_count", "overlap": "overlap", "rec": "rec", "obj": "obj",
    "default_fov": "default_fov", "match_iou": "match_iou", "conf_threshold": "conf_threshold",
    "on_error": "on_error", "stub_latency_ms": "stub_latency_ms", "adapter_timeout": "adapter_timeout",
    "oracle_dropout": "oracle_dropout", "oracle_jitter": "oracle_jitter", "oracle_fp_rate": "oracle_fp_rate",
    "min_visibility": "min_visibility",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--dataset", help="COCO annotations JSON")
    g.add_argument("--images-dir", dest="images_dir", help="image root (default: dataset's directory)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--policy", help="scaledV1 | scaledV2 | equation | path to a JSON table")
    g.add_argument("--adapter", choices=("oracle", "stub", "external"))
    g.add_argument("--adapter-cmd", dest="adapter_cmd", help="command line of an external detector")
    g.add_argument("--adapter-timeout", dest="adapter_timeout", type=float)
    g.add_argument("--workers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=("dynamic", "static", "notile"))
    g.add_argument("--setup", help="label for report rows")
    g.add_argument("--tile-size", dest="tile_size", type=int)
    g.add_argument("--stride", type=float)
    g.add_argument("--bin-count", dest="bin_count", type=int)
    g.add_argument("--overlap", type=float)
    g.add_argument("--rec", type=float, help="minimum recognisable area, px^2")
    g.add_argument("--obj", type=float, help="target area, m^2")
    g.add_argument("--default-fov", dest="default_fov", type=float)
    g.add_argument("--match-iou", dest="match_iou", type=float)
    g.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    g.add_argument("--on-error", dest="on_error", choices=("abort", "skip"))
    g.add_argument("--stub-latency-ms", dest="stub_latency_ms", type=float)
    g.add_argument("--oracle-dropout", dest="oracle_dropout", type=float)
    g.add_argument("--oracle-jitter", dest="oracle_jitter", type=float)
    g.add_argument("--oracle-fp-rate", dest="oracle_fp_rate", type=float)
    g.add_argument("--min-visibility", dest="min_visibility", type=float)
    g.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="dyntile", description="Altitude-aware dynamic tiling for small-object detection.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", parents=[common], help="required resolution / bin / tiles table")
    p.add_argument("--altitudes", help="'10,20,30' or 'start:stop:step' (default: 10,20,30,240,250)")
    p.add_argument("--fovs", help="comma list of FOVs in degrees (default: 73,65,50)")

    sub.add_parser("prepare-train", parents=[common], help="2x2 training tiles")
    sub.add_parser("scale-test", parents=[common], help="altitude-scaled test set + manifest")
    sub.add_parser("run", parents=[common], help="detect over a dataset")
    p = sub.add_parser("eval", parents=[common], help="score a detections file")
    p.add_argument("--detections", required=True)
    p = sub.add_parser("bench", parents=[common], help="timed serial run + evaluation")
    p.add_argument("--warmup", type=int, default=1)
    p = sub.add_parser("report", parents=[common], help="summary CSV and annotation-area figures")
    p.add_argument("--reports", nargs="*", default=[], help="report.json files to tabulate")
    p.add_argument("--compare", nargs="*", default=[], help="more COCO files to plot")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic COCO dataset")
    p.add_argument("--images", type=int, default=20)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"dyntile: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        overrides = {key: getattr(args, attr, None) for attr, key in _OVERRIDES.items()}
        cfg = load_config(args.config, overrides).validate()
        cmd = args.command
        if cmd == "plan":
            rows = cmd_plan(cfg, args.altitudes, args.fovs)
            _print_table(rows)
            if args.out:
                with open(_out_dir(cfg) / "plan.csv", "w", newline="") as f:
                    _print_table(rows, f)
        elif cmd == "prepare-train":
            tiled = cmd_prepare_train(cfg)
            print(f"{len(tiled.images)} tiles, {len(tiled.annotations)} annotations -> {cfg.out}")
        elif cmd == "scale-test":
            manifest = cmd_scale_test(cfg)
            print(f"{len(manifest)} images scaled -> {cfg.out}")
        elif cmd == "run":
            res = cmd_run(cfg)
            print(f"{len(res.frames)} images, {res.total_tiles} tiles -> {cfg.out}")
        elif cmd == "eval":
            rep = cmd_eval(cfg, args.detections)
            print(json.dumps(rep.csv_row()))
        elif cmd == "bench":
            rep = cmd_bench(cfg, args.warmup, workers_given=args.workers is not None)
            print(json.dumps(rep.csv_row()))
        elif cmd == "report":
            cmd_report(cfg, args.reports, args.compare)
            print(f"report -> {cfg.out}")
        elif cmd == "synth":
            path = cmd_synth(cfg, args.images)
            print(path)
    except (UsageError, ConfigError, ScaleLawError) as e:
        print(f"dyntile: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DetectionError as e:
        print(f"dyntile: adapter error: {e}", file=sys.stderr)
        return EXIT_ADAPTER
    except (DataError, TilingError, OSError) as e:
        print(f"dyntile: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
