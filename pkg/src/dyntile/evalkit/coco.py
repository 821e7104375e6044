"""COCO-format dataset loading and writing."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Union

from ..fusion import Detection
from ..tiler import BoxF, Frame


class DataError(ValueError):
    """Bad or inconsistent dataset / detection files."""


@dataclass
class ImageRecord:
    id: Hashable
    file_name: str
    width: int
    height: int
    altitude_m: Optional[float] = None
    fov_deg: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def altitude_known(self) -> bool:
        return self.altitude_m is not None


@dataclass
class Annotation:
    id: Hashable
    image_id: Hashable
    class_id: int
    box: BoxF
    area_px2: float
    iscrowd: bool = False


@dataclass
class CocoDataset:
    images: Dict[Hashable, ImageRecord] = field(default_factory=dict)
    annotations: List[Annotation] = field(default_factory=list)
    categories: Dict[int, str] = field(default_factory=dict)
    path: Optional[Path] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self._by_image = None

    @property
    def image_dir(self) -> Optional[Path]:
        return self.path.parent if self.path is not None else None

    def annotations_for(self, image_id: Hashable) -> List[Annotation]:
        if self._by_image is None:
            idx = defaultdict(list)
            for a in self.annotations:
                idx[a.image_id].append(a)
            self._by_image = idx
        return self._by_image.get(image_id, [])

    def invalidate(self) -> None:
        self._by_image = None

    def ground_truth(self) -> Dict[Hashable, list]:
        """image_id -> [(box, class_id)] for non-crowd annotations."""
        out = {i: [] for i in self.images}
        for a in self.annotations:
            if not a.iscrowd:
                out[a.image_id].append((a.box, a.class_id))
        return out

    def counts(self) -> tuple:
        return len(self.images), len(self.annotations)


def _number(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise DataError(f"{what}: expected a finite number, got {v!r}")
    return float(v)


def _altitude(rec: dict) -> Optional[float]:
    meta = rec.get("meta") if isinstance(rec.get("meta"), dict) else {}
    for src in (meta, rec):
        v = src.get("altitude", src.get("altitude_m"))
        if v is None:
            continue
        if isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0:
            return float(v)
        return None  # 0 / negative / junk marks a missing altitude
    return None


def _fov(rec: dict) -> Optional[float]:
    meta = rec.get("meta") if isinstance(rec.get("meta"), dict) else {}
    for src in (meta, rec):
        v = src.get("fov_deg")
        if isinstance(v, (int, float)) and 0 < v < 180:
            return float(v)
    return None


def parse_coco(data: dict, path: Optional[Path] = None) -> CocoDataset:
    if not isinstance(data, dict):
        raise DataError("COCO file must hold a JSON object")
    for key in ("images", "annotations"):
        if not isinstance(data.get(key, []), list):
            raise DataError(f"'{key}' must be a list")

    ds = CocoDataset(path=path, info=data.get("info", {}) if isinstance(data.get("info"), dict) else {})
    for c in data.get("categories", []):
        try:
            ds.categories[int(c["id"])] = str(c.get("name", c["id"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"bad category record {c!r}") from e

    for rec in data.get("images", []):
        if not isinstance(rec, dict) or "id" not in rec:
            raise DataError(f"image record without id: {rec!r}")
        iid = rec["id"]
        if iid in ds.images:
            raise DataError(f"duplicate image id {iid!r}")
        try:
            w, h = int(rec["width"]), int(rec["height"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"image {iid!r}: missing or bad width/height") from e
        if w <= 0 or h <= 0:
            raise DataError(f"image {iid!r}: non-positive size {w}x{h}")
        extra = {k: v for k, v in rec.items() if k not in ("id", "file_name", "width", "height")}
        ds.images[iid] = ImageRecord(iid, str(rec.get("file_name", "")), w, h, _altitude(rec), _fov(rec), extra)

    seen = set()
    for rec in data.get("annotations", []):
        if not isinstance(rec, dict) or "id" not in rec:
            raise DataError(f"annotation record without id: {rec!r}")
        aid = rec["id"]
        if aid in seen:
            raise DataError(f"duplicate annotation id {aid!r}")
        seen.add(aid)
        if rec.get("image_id") not in ds.images:
            raise DataError(f"annotation {aid!r} references unknown image_id {rec.get('image_id')!r}")
        bbox = rec.get("bbox")
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise DataError(f"annotation {aid!r}: bbox must be [x, y, w, h]")
        x, y, w, h = (_number(v, f"annotation {aid!r} bbox") for v in bbox)
        if w < 0 or h < 0:
            raise DataError(f"annotation {aid!r}: negative bbox size")
        try:
            cls = int(rec["category_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"annotation {aid!r}: missing or bad category_id") from e
        if ds.categories and cls not in ds.categories:
            raise DataError(f"annotation {aid!r} references unknown category_id {cls}")
        area = rec.get("area")
        area = _number(area, f"annotation {aid!r} area") if area is not None else w * h
        ds.annotations.append(
            Annotation(aid, rec["image_id"], cls, BoxF(x, y, w, h, Frame.ORIGINAL), area, bool(rec.get("iscrowd", 0)))
        )
    if not ds.categories:
        ds.categories = {c: str(c) for c in sorted({a.class_id for a in ds.annotations})}
    return ds


def load_coco(path: Union[str, Path]) -> CocoDataset:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON ({e})") from e
    return parse_coco(data, path)


def coco_dict(ds: CocoDataset) -> dict:
    images = []
    for rec in ds.images.values():
        d = dict(rec.extra)
        d.update(id=rec.id, file_name=rec.file_name, width=rec.width, height=rec.height)
        meta = dict(d.get("meta") or {})
        if rec.altitude_m is not None:
            meta["altitude"] = rec.altitude_m
        if rec.fov_deg is not None:
            meta["fov_deg"] = rec.fov_deg
        if meta:
            d["meta"] = meta
        images.append(d)
    anns = [
        {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.class_id,
            "bbox": a.box.as_xywh(),
            "area": a.area_px2,
            "iscrowd": int(a.iscrowd),
        }
        for a in ds.annotations
    ]
    cats = [{"id": k, "name": v} for k, v in sorted(ds.categories.items())]
    out = {"images": images, "annotations": anns, "categories": cats}
    if ds.info:
        out["info"] = ds.info
    return out


def save_coco(ds: CocoDataset, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(coco_dict(ds)))


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------


def detections_to_coco(per_image: Mapping[Hashable, Sequence[Detection]]) -> list:
    out = []
    for image_id, dets in per_image.items():
        for d in dets:
            out.append({
                "image_id": image_id,
                "category_id": int(d.class_id),
                "bbox": [float(v) for v in d.box.as_xywh()],
                "score": float(d.score),
            })
    return out


def save_detections(per_image: Mapping[Hashable, Sequence[Detection]], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(detections_to_coco(per_image), sort_keys=True))


def load_detections(path: Union[str, Path], dataset: Optional[CocoDataset] = None) -> Dict[Hashable, List[Detection]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON ({e})") from e
    if not isinstance(data, list):
        raise DataError(f"{path}: detections file must hold a JSON list")
    out: Dict[Hashable, List[Detection]] = defaultdict(list)
    for i, rec in enumerate(data):
        try:
            x, y, w, h = (_number(v, "bbox") for v in rec["bbox"])
            det = Detection(BoxF(x, y, w, h, Frame.ORIGINAL), _number(rec["score"], "score"), int(rec["category_id"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: detection #{i} malformed: {e}") from e
        if dataset is not None and rec["image_id"] not in dataset.images:
            raise DataError(f"{path}: detection #{i} references unknown image_id {rec['image_id']!r}")
        out[rec["image_id"]].append(det)
    return dict(out)
