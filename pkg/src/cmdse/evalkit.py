"""Detection scoring, per-class average precision and split/bucket reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .matching import GroundTruthHoi, ho_distance
from .semantics import Vocabulary

SMALL_MAX = 0.33
LARGE_MIN = 0.67
RARE_THRESHOLD = 10
IOU_THRESH = 0.5


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    image_id: int
    b_h: tuple[float, float, float, float]
    b_o: tuple[float, float, float, float]
    interaction: int
    score: float

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "b_h": list(self.b_h), "b_o": list(self.b_o),
                "interaction": self.interaction, "score": self.score}


def final_score(s: float, c: float, gamma: float = 2.0) -> float:
    return s * c ** gamma


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def is_true_positive(det: Detection, gt: GroundTruthHoi, used: set, gt_key=None) -> bool:
    """Both boxes strictly above the IoU threshold, right class, GT not yet claimed."""
    key = id(gt) if gt_key is None else gt_key
    return (key not in used and det.interaction == gt.interaction
            and box_iou(det.b_h, gt.b_h) > IOU_THRESH and box_iou(det.b_o, gt.b_o) > IOU_THRESH)


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """All-points interpolated AP from a 0/1 true-positive vector in ranked order."""
    if num_gt <= 0:
        raise EvalError("average precision is undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, tp.size + 1)
    # precision envelope: best precision at any recall at least this high
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * env))


def rank_order(dets: list[Detection]) -> list[int]:
    """Score descending; ties broken by content so input order never matters."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].image_id, dets[i].interaction,
                                                   dets[i].b_h, dets[i].b_o))


@dataclass
class ClassResult:
    tp: np.ndarray           # ranked 0/1
    det_dist: np.ndarray     # predicted distance per ranked detection
    matched_gt: np.ndarray   # index into the class GT list, or -1
    gt_dist: np.ndarray


def match_class(dets: list[Detection], gts: list[tuple[int, GroundTruthHoi]], distance_kind: str) -> ClassResult:
    order = rank_order(dets)
    ranked = [dets[i] for i in order]
    det_img = np.array([d.image_id for d in ranked], dtype=np.int64)
    gt_img = np.array([img for img, _ in gts], dtype=np.int64)
    matched = kernels.greedy_match(det_img, [d.b_h for d in ranked], [d.b_o for d in ranked],
                                   gt_img, [g.b_h for _, g in gts], [g.b_o for _, g in gts], IOU_THRESH)
    return ClassResult((matched >= 0).astype(np.float64),
                       np.array([ho_distance(d.b_h, d.b_o, distance_kind) for d in ranked]),
                       matched, np.array([ho_distance(g.b_h, g.b_o, distance_kind) for _, g in gts]))


def bucket_ap(res: ClassResult, lo: float, hi: float) -> float | None:
    """AP restricted to GTs with distance in [lo, hi]; detections matched to other GTs,
    or unmatched with a predicted distance outside the range, are ignored."""
    in_gt = (res.gt_dist >= lo) & (res.gt_dist <= hi)
    n = int(in_gt.sum())
    if n == 0:
        return None
    keep = np.where(res.matched_gt >= 0, in_gt[np.maximum(res.matched_gt, 0)],
                    (res.det_dist >= lo) & (res.det_dist <= hi))
    return average_precision(res.tp[keep], n)


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class EvalReport:
    per_class: dict[int, float | None]
    splits: dict[str, float | None]
    buckets: dict[str, float | None]
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"mAP": self.splits, "buckets": self.buckets,
                "per_class": {str(k): v for k, v in sorted(self.per_class.items())}, "counts": self.counts}

    def table(self) -> str:
        return render_table(["Full", "Seen", "Unseen", "Rare", "Non-rare", "Small", "Large"],
                            [[self.splits["full"], self.splits["seen"], self.splits["unseen"], self.splits["rare"],
                              self.splits["non_rare"], self.buckets["small"], self.buckets["large"]]])


def fmt(v: float | None) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


def render_table(header: list[str], rows: list[list], labels: list[str] | None = None) -> str:
    """Plain aligned table; numeric cells are shown as percentages."""
    cells = [[fmt(v) if v is None or isinstance(v, float) else str(v) for v in row] for row in rows]
    if labels is not None:
        header = [""] + header
        cells = [[lab] + row for lab, row in zip(labels, cells)]
    widths = [max(len(str(h)), *(len(r[i]) for r in cells)) if cells else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def evaluate(dets: list[Detection], scenes, vocab: Vocabulary, train_counts: list[int] | None = None,
             rare_threshold: int = RARE_THRESHOLD, distance_kind: str = "absolute") -> EvalReport:
    """mAP over full/seen/unseen/rare/non-rare class sets plus small/large distance buckets.

    ``scenes`` is any iterable of records with ``image_id`` and ``hois``.
    Classes without ground truth are left out of every mean.
    """
    n = vocab.num_interactions
    gts_by_class: list[list[tuple[int, GroundTruthHoi]]] = [[] for _ in range(n)]
    images = set()
    for s in scenes:
        images.add(s.image_id)
        for g in s.hois:
            gts_by_class[g.interaction].append((s.image_id, g))
    dets_by_class: list[list[Detection]] = [[] for _ in range(n)]
    for d in dets:
        if not 0 <= d.interaction < n:
            raise EvalError(f"detection refers to unknown interaction {d.interaction}")
        if d.image_id not in images:
            raise EvalError(f"detection refers to unknown image {d.image_id}")
        dets_by_class[d.interaction].append(d)
    per_class: dict[int, float | None] = {}
    small: dict[int, float | None] = {}
    large: dict[int, float | None] = {}
    for c in range(n):
        if not gts_by_class[c]:
            per_class[c] = small[c] = large[c] = None
            continue
        res = match_class(dets_by_class[c], gts_by_class[c], distance_kind)
        per_class[c] = average_precision(res.tp, len(gts_by_class[c]))
        small[c] = bucket_ap(res, -math.inf, SMALL_MAX)
        large[c] = bucket_ap(res, LARGE_MIN, math.inf)
    seen = set(vocab.seen_ids())
    counts = train_counts if train_counts is not None else [0] * n
    rare = {c for c in seen if counts[c] < rare_threshold}
    splits = {
        "full": _mean(per_class.values()),
        "seen": _mean(per_class[c] for c in seen),
        "unseen": _mean(per_class[c] for c in range(n) if c not in seen),
        "rare": _mean(per_class[c] for c in rare),
        "non_rare": _mean(per_class[c] for c in seen - rare),
    }
    buckets = {"small": _mean(small.values()), "large": _mean(large.values())}
    tally = {"detections": len(dets), "ground_truth": sum(len(g) for g in gts_by_class),
             "classes_with_gt": sum(1 for g in gts_by_class if g)}
    return EvalReport(per_class, splits, buckets, tally)


# -- files ------------------------------------------------------------------------------

def write_detections(dets: list[Detection], path) -> None:
    Path(path).write_text("".join(json.dumps(d.to_json()) + "\n" for d in dets))


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            det = Detection(int(doc["image_id"]), tuple(float(v) for v in doc["b_h"]),
                            tuple(float(v) for v in doc["b_o"]), int(doc["interaction"]), float(doc["score"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise EvalError(f"{path} line {lineno}: malformed detection") from None
        if len(det.b_h) != 4 or len(det.b_o) != 4:
            raise EvalError(f"{path} line {lineno}: boxes need four coordinates")
        out.append(det)
    return out


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")
