"""Bipartite matching between HOI predictions and ground truth.

The matching cost per (prediction, ground truth) pair is

    lambda_b * (L1(b_h) + L1(b_o)) + lambda_iou * ((1 - GIoU(b_h)) + (1 - GIoU(b_o)))
    + lambda_cls * (1 - p_target) + lambda_d * |Lv - g|

where ``p_target`` is the softmax probability of the ground-truth interaction,
``Lv`` the normalised level index of the prediction and ``g`` the centre
distance between the annotated human and object.

Ties between equal-cost assignments are broken lexicographically: read the
assignment as the tuple (row of column 0, row of column 1, ...) and take the
smallest. The solver and the brute-force oracle both follow this rule.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels

BRUTE_FORCE_MAX_COLS = 8
_ENUMERATE_LIMIT = 50_000


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthHoi:
    b_h: tuple[float, float, float, float]
    b_o: tuple[float, float, float, float]
    action: int
    object: int
    interaction: int

    def __post_init__(self):
        for name in ("b_h", "b_o"):
            box = tuple(float(v) for v in getattr(self, name))
            if len(box) != 4:
                raise ValueError(f"{name} must have 4 coordinates, got {box}")
            object.__setattr__(self, name, box)


@dataclass(frozen=True)
class MatchWeights:
    box: float = 5.0
    iou: float = 2.0
    cls: float = 5.0
    d: float = 5.0


@dataclass
class CostMatrix:
    total: np.ndarray
    box: np.ndarray
    iou: np.ndarray
    cls: np.ndarray
    d: np.ndarray
    weights: MatchWeights = field(default_factory=MatchWeights)

    @property
    def shape(self) -> tuple[int, int]:
        return self.total.shape


@dataclass
class Assignment:
    """Matched pairs, one per ground truth, ordered by ground-truth index."""

    pred_idx: np.ndarray
    gt_idx: np.ndarray
    total: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(int(p), int(g)) for p, g in zip(self.pred_idx, self.gt_idx)]


# -- geometry ---------------------------------------------------------------------------

def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    half = b[..., 2:] / 2.0
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU between every box in ``a`` (n,4) and ``b`` (m,4), both cxcywh."""
    A = cxcywh_to_xyxy(a)[:, None, :]
    B = cxcywh_to_xyxy(b)[None, :, :]
    area_a = (A[..., 2] - A[..., 0]) * (A[..., 3] - A[..., 1])
    area_b = (B[..., 2] - B[..., 0]) * (B[..., 3] - B[..., 1])
    iw = np.clip(np.minimum(A[..., 2], B[..., 2]) - np.maximum(A[..., 0], B[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(A[..., 3], B[..., 3]) - np.maximum(A[..., 1], B[..., 1]), 0.0, None)
    inter = iw * ih
    union = area_a + area_b - inter
    ew = np.maximum(A[..., 2], B[..., 2]) - np.minimum(A[..., 0], B[..., 0])
    eh = np.maximum(A[..., 3], B[..., 3]) - np.minimum(A[..., 1], B[..., 1])
    enclose = ew * eh
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        penalty = np.where(enclose > 0, (enclose - union) / np.where(enclose > 0, enclose, 1.0), 0.0)
    return iou - penalty


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    A = cxcywh_to_xyxy(a)[:, None, :]
    B = cxcywh_to_xyxy(b)[None, :, :]
    area_a = (A[..., 2] - A[..., 0]) * (A[..., 3] - A[..., 1])
    area_b = (B[..., 2] - B[..., 0]) * (B[..., 3] - B[..., 1])
    iw = np.clip(np.minimum(A[..., 2], B[..., 2]) - np.maximum(A[..., 0], B[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(A[..., 3], B[..., 3]) - np.maximum(A[..., 1], B[..., 1]), 0.0, None)
    inter = iw * ih
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def ho_distance(b_h, b_o, kind: str = "absolute") -> float:
    """Centre distance between a human and an object box (cxcywh, unit square).

    ``absolute`` is the plain L2 distance. ``relative`` divides it by the
    diagonal of the pair's enclosing box, which always lies in [0, 1].
    """
    b_h = np.asarray(b_h, dtype=np.float64)
    b_o = np.asarray(b_o, dtype=np.float64)
    dist = float(np.hypot(b_h[0] - b_o[0], b_h[1] - b_o[1]))
    if kind == "absolute":
        return dist
    if kind == "relative":
        corners = cxcywh_to_xyxy(np.stack([b_h, b_o]))
        w = corners[:, 2].max() - corners[:, 0].min()
        h = corners[:, 3].max() - corners[:, 1].min()
        diag = float(np.hypot(w, h))
        return dist / diag if diag > 0 else 0.0
    raise ValueError(f"unknown distance kind {kind!r}")


def gt_distance(gt: GroundTruthHoi, kind: str = "absolute") -> float:
    return ho_distance(gt.b_h, gt.b_o, kind)


def distance_constraint(lv: float, g: float) -> float:
    return abs(float(lv) - float(g))


# -- cost -------------------------------------------------------------------------------

def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cost_matrix_from_arrays(pred_h: np.ndarray, pred_o: np.ndarray, logits: np.ndarray, lv: np.ndarray,
                            gt_h: np.ndarray, gt_o: np.ndarray, gt_cls: np.ndarray, gt_g: np.ndarray,
                            weights: MatchWeights = MatchWeights()) -> CostMatrix:
    """Cost for R predictions against K ground truths; every input is a plain array."""
    gt_h = np.asarray(gt_h, dtype=np.float64).reshape(-1, 4)
    if gt_h.shape[0] == 0:
        raise MatchingError("cannot build a cost matrix without ground truth")
    gt_o = np.asarray(gt_o, dtype=np.float64).reshape(-1, 4)
    pred_h = np.asarray(pred_h, dtype=np.float64).reshape(-1, 4)
    pred_o = np.asarray(pred_o, dtype=np.float64).reshape(-1, 4)
    box = (np.abs(pred_h[:, None, :] - gt_h[None]).mean(-1)
           + np.abs(pred_o[:, None, :] - gt_o[None]).mean(-1))
    iou = (1.0 - pairwise_giou(pred_h, gt_h)) + (1.0 - pairwise_giou(pred_o, gt_o))
    prob = softmax_np(np.asarray(logits, dtype=np.float64))
    cls = 1.0 - prob[:, np.asarray(gt_cls, dtype=np.int64)]
    d = np.abs(np.asarray(lv, dtype=np.float64)[:, None] - np.asarray(gt_g, dtype=np.float64)[None, :])
    total = weights.box * box + weights.iou * iou + weights.cls * cls + weights.d * d
    if not np.all(np.isfinite(total)):
        raise MatchingError("non-finite entries in the matching cost")
    return CostMatrix(total=total, box=box, iou=iou, cls=cls, d=d, weights=weights)


def build_cost_matrix(preds, gts: list[GroundTruthHoi], weights: MatchWeights = MatchWeights(),
                      class_index: dict[int, int] | None = None, distance_kind: str = "absolute") -> CostMatrix:
    """Cost between a :class:`~cmdse.decoder.PredictionSet` and an image's ground truth.

    ``class_index`` maps interaction ids to logit columns when the logits only
    cover a subset of the vocabulary (training uses seen classes only).
    """
    if not gts:
        raise MatchingError("cannot build a cost matrix without ground truth")
    if preds.logits is None:
        raise MatchingError("predictions carry no interaction logits; fuse them with a text bank first")
    cls = [gt.interaction if class_index is None else class_index[gt.interaction] for gt in gts]
    return cost_matrix_from_arrays(
        preds.boxes_h, preds.boxes_o, preds.logits, preds.lv,
        np.array([gt.b_h for gt in gts]), np.array([gt.b_o for gt in gts]),
        np.array(cls), np.array([gt_distance(gt, distance_kind) for gt in gts]), weights)


# -- solvers ----------------------------------------------------------------------------

def _as_array(cost) -> np.ndarray:
    arr = cost.total if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if arr.ndim != 2:
        raise MatchingError(f"cost matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MatchingError("cost matrix has non-finite entries")
    return arr


def _finish(arr: np.ndarray, rows_for_cols: np.ndarray) -> Assignment:
    cols = np.arange(arr.shape[1])
    total = 0.0
    for j in cols:
        total += float(arr[rows_for_cols[j], j])
    return Assignment(pred_idx=np.asarray(rows_for_cols, dtype=np.int64), gt_idx=cols, total=total)


def tie_break_keys(rows: int, cols: int) -> np.ndarray:
    """Secondary costs whose sum orders assignments lexicographically by row tuple.

    Entry (i, j) is ``i * rows**(cols-1-j)``; exact in float64 while
    rows**cols < 2**53. Larger problems fall back to zero keys, where ties are
    resolved by the solver's scan order.
    """
    if cols == 0 or float(rows) ** cols >= 2.0 ** 53:
        return np.zeros((rows, cols))
    weights = np.array([float(rows) ** (cols - 1 - j) for j in range(cols)])
    return np.arange(rows, dtype=np.float64)[:, None] * weights[None, :]


def hungarian(cost) -> Assignment:
    """Exact minimum-cost injective assignment of every column to a distinct row."""
    arr = _as_array(cost)
    rows, cols = arr.shape
    if rows < cols:
        raise MatchingError(f"need at least as many predictions as ground truths, got {rows} < {cols}")
    if cols == 0:
        return Assignment(np.zeros(0, np.int64), np.zeros(0, np.int64), 0.0)
    return _finish(arr, kernels.lsa_lex(arr, tie_break_keys(rows, cols)))


def brute_force_match(cost) -> Assignment:
    """Exhaustive minimum over all injections, used to validate :func:`hungarian`.

    Small instances enumerate every injection explicitly. Larger ones (up to
    ``BRUTE_FORCE_MAX_COLS`` columns) run an exact dynamic program over subsets
    of used columns, which visits the same search space without listing it.
    """
    arr = _as_array(cost)
    rows, cols = arr.shape
    if cols > BRUTE_FORCE_MAX_COLS:
        raise MatchingError(f"brute force limited to {BRUTE_FORCE_MAX_COLS} columns, got {cols}")
    if rows < cols:
        raise MatchingError(f"need at least as many predictions as ground truths, got {rows} < {cols}")
    if cols == 0:
        return Assignment(np.zeros(0, np.int64), np.zeros(0, np.int64), 0.0)
    n_inj = 1
    for k in range(cols):
        n_inj *= rows - k
    if n_inj <= _ENUMERATE_LIMIT:
        return _finish(arr, np.array(_enumerate(arr), dtype=np.int64))
    return _finish(arr, _subset_dp(arr))


def _enumerate(arr: np.ndarray) -> tuple[int, ...]:
    rows, cols = arr.shape
    best, best_cost = None, np.inf
    # permutations() yields tuples in lexicographic order, so strict '<' keeps the smallest tuple on ties
    for perm in itertools.permutations(range(rows), cols):
        c = 0.0
        for j, r in enumerate(perm):
            c += arr[r, j]
        if c < best_cost:
            best, best_cost = perm, c
    return best


def _subset_dp(arr: np.ndarray) -> np.ndarray:
    rows, cols = arr.shape
    if cols * rows ** cols >= 2 ** 62:
        raise MatchingError(f"{rows}x{cols} is too large for the exhaustive search")
    full = (1 << cols) - 1
    n_masks = 1 << cols
    cost = np.full(n_masks, np.inf)
    key = np.full(n_masks, np.iinfo(np.int64).max, dtype=np.int64)
    cost[0] = 0.0
    key[0] = 0
    place = [rows ** (cols - 1 - j) for j in range(cols)]
    masks = np.arange(n_masks)
    without = [masks[(masks >> j) & 1 == 0] for j in range(cols)]
    choice = np.full((rows, n_masks), -1, dtype=np.int8)
    for i in range(rows):
        new_cost, new_key = cost.copy(), key.copy()
        for j in range(cols):
            src = without[j]
            dst = src | (1 << j)
            ok = np.isfinite(cost[src])
            src, dst = src[ok], dst[ok]
            c = cost[src] + arr[i, j]
            k = key[src] + i * place[j]
            better = (c < new_cost[dst]) | ((c == new_cost[dst]) & (k < new_key[dst]))
            dst_b = dst[better]
            new_cost[dst_b] = c[better]
            new_key[dst_b] = k[better]
            choice[i, dst_b] = j
        cost, key = new_cost, new_key
    out = np.full(cols, -1, dtype=np.int64)
    mask = full
    for i in range(rows - 1, -1, -1):
        j = int(choice[i, mask])
        if j >= 0:
            out[j] = i
            mask ^= 1 << j
    return out
