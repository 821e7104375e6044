"""Reference detector process for the stdio protocol.

Finds bright blobs: pixels whose max channel exceeds a threshold are grouped
into 8-connected components and each component's bounding box is reported.
Good enough for the synthetic scenes in :mod:`dyntile.synth`, and a template
for wrapping a real model.

Run ``python -m dyntile.detect.worker --fixed '[...]'`` to echo a fixed
detection list instead of reading pixels.
"""

import argparse
import json
import sys

import numpy as np
from scipy import ndimage

from ..tiler import read_raster


def blob_boxes(img: np.ndarray, threshold: int = 128, min_area: int = 1) -> list:
    mask = img.max(axis=2) > threshold
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = sl
        area = int((labels[sl] == i).sum())
        if area < min_area:
            continue
        out.append({
            "bbox": [xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start],
            "score": 1.0,
            "class_id": 0,
        })
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixed", help="JSON list of detections to return for every request")
    ap.add_argument("--threshold", type=int, default=128)
    args = ap.parse_args(argv)
    fixed = json.loads(args.fixed) if args.fixed else None

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        if fixed is not None:
            dets = fixed
        else:
            dets = blob_boxes(read_raster(req["image_path"]), args.threshold)
        sys.stdout.write(json.dumps({"id": req["id"], "detections": dets}) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
