"""Independent reference implementations used as test oracles."""

from functools import lru_cache

import numpy as np
from shapely.geometry import box as sbox

from dyntile.fusion import Detection
from dyntile.tiler import BoxF, Frame


def shapely_iou(a: BoxF, b: BoxF) -> float:
    pa = sbox(a.x, a.y, a.x + a.w, a.y + a.h)
    pb = sbox(b.x, b.y, b.x + b.w, b.y + b.h)
    union = pa.union(pb).area
    return pa.intersection(pb).area / union if union > 0 else 0.0


def reference_nms(dets, threshold):
    """Suppression-style greedy NMS: take the best, delete what it covers, repeat."""
    remaining = list(range(len(dets)))
    keep = []
    while remaining:
        best = max(remaining, key=lambda i: (dets[i].score, dets[i].box.w * dets[i].box.h, -i))
        keep.append(best)
        remaining.remove(best)
        remaining = [
            j for j in remaining
            if dets[j].class_id != dets[best].class_id or shapely_iou(dets[best].box, dets[j].box) <= threshold
        ]
    return keep


def random_detections(rng, n, frame=Frame.ORIGINAL, extent=200, n_classes=3, score_levels=10):
    out = []
    for _ in range(n):
        x, y = rng.integers(0, extent, size=2)
        w, h = rng.integers(1, 60, size=2)
        score = int(rng.integers(0, score_levels + 1)) / score_levels  # ties on purpose
        out.append(Detection(BoxF(float(x), float(y), float(w), float(h), frame), score, int(rng.integers(n_classes))))
    return out


def brute_ap(records, n_gt):
    """Envelope AP over 101 recall points from (score, is_tp) pairs, stable by input order."""
    if n_gt == 0:
        return None
    order = sorted(range(len(records)), key=lambda i: -records[i][0])
    tp = fp = 0
    prec, rec = [], []
    for i in order:
        if records[i][1]:
            tp += 1
        else:
            fp += 1
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    total = 0.0
    for r in np.linspace(0, 1, 101):
        cands = [p for p, q in zip(prec, rec) if q >= r]
        total += max(cands) if cands else 0.0
    return total / 101


@lru_cache(maxsize=None)
def _overlap(db: BoxF, gb: BoxF, crowd: bool) -> float:
    if crowd:
        pd = sbox(db.x, db.y, db.x2, db.y2)
        pg = sbox(gb.x, gb.y, gb.x2, gb.y2)
        return pd.intersection(pg).area / pd.area if pd.area else 0.0
    return shapely_iou(db, gb)


def brute_match(dets, anns, t, lo=0.0, hi=float("inf")):
    """Exhaustive greedy matcher for one image and class.

    Returns (score, outcome) pairs with outcome True/False for TP/FP and
    drops detections that land on ignore regions, plus the counted GT total.
    """
    ignored = [a.iscrowd or not (lo <= a.area_px2 < hi) for a in anns]
    taken = [False] * len(anns)
    out = []
    ranked = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    for di in ranked:
        d = dets[di]

        def overlap(g):
            return _overlap(d.box, anns[g].box, anns[g].iscrowd)

        chosen = None
        for want_ignored in (False, True):
            pool = [g for g in range(len(anns)) if ignored[g] == want_ignored
                    and (not taken[g] or anns[g].iscrowd) and overlap(g) >= t]
            if pool:
                best = max(overlap(g) for g in pool)
                chosen = [g for g in pool if overlap(g) == best][-1]
                break
        if chosen is not None:
            taken[chosen] = True
            if not ignored[chosen]:
                out.append((d.score, True))
        elif lo <= d.box.w * d.box.h < hi:
            out.append((d.score, False))
    return out, sum(1 for g in ignored if not g)
