"""Training objective: L1 and GIoU box terms, sigmoid focal classification, distance term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matching import Assignment, GroundTruthHoi, MatchWeights, gt_distance
from .numcore import tensor as T
from .numcore.tensor import Tensor


class LossError(ValueError):
    pass


def l1_box_loss(pred_box, gt_box) -> Tensor:
    """Mean absolute coordinate difference; batched over leading axes, averaged over all of them."""
    return T.mean(T.tabs(T.as_tensor(pred_box) - T.as_tensor(gt_box)))


def _corners(box: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx, cy, w, h = box[..., 0], box[..., 1], box[..., 2], box[..., 3]
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def _safe_ratio(num: Tensor, den: Tensor) -> Tensor:
    # ratio where den > 0, else 0
    ok = den.data > 0
    return T.div(num * ok.astype(np.float64), T.as_tensor(np.where(ok, 0.0, 1.0)) + den * ok.astype(np.float64))


def giou(pred_box, gt_box, corners: bool = False) -> Tensor:
    a, b = T.as_tensor(pred_box), T.as_tensor(gt_box)
    if corners:
        ax0, ay0, ax1, ay1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
        bx0, by0, bx1, by1 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    else:
        ax0, ay0, ax1, ay1 = _corners(a)
        bx0, by0, bx1, by1 = _corners(b)
    iw = T.maximum(T.minimum(ax1, bx1) - T.maximum(ax0, bx0), 0.0)
    ih = T.maximum(T.minimum(ay1, by1) - T.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    enclose = (T.maximum(ax1, bx1) - T.minimum(ax0, bx0)) * (T.maximum(ay1, by1) - T.minimum(ay0, by0))
    return _safe_ratio(inter, union) - _safe_ratio(enclose - union, enclose)


def giou_loss(pred_box, gt_box, corners: bool = False) -> Tensor:
    """Mean of 1 - GIoU over the leading axes."""
    return T.mean(1.0 - giou(pred_box, gt_box, corners))


def focal_terms(logits, targets, gamma_f: float = 2.0, alpha_f: float = 0.25) -> Tensor:
    """Elementwise sigmoid focal loss; ``targets`` is a 0/1 array shaped like ``logits``."""
    x = T.as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    p = T.sigmoid(x)
    pos = -alpha_f * T.power(1.0 - p, gamma_f) * T.log_sigmoid(x)
    neg = -(1.0 - alpha_f) * T.power(p, gamma_f) * T.log_sigmoid(-x)
    return pos * t + neg * (1.0 - t)


def focal_loss(logits, target: int, gamma_f: float = 2.0, alpha_f: float = 0.25) -> Tensor:
    """Focal loss summed over the classes of one logit vector with a single positive."""
    x = T.as_tensor(logits)
    n = x.shape[-1]
    if not 0 <= target < n:
        raise LossError(f"target {target} outside 0..{n - 1}")
    onehot = np.zeros(n)
    onehot[target] = 1.0
    return T.tsum(focal_terms(x, onehot, gamma_f, alpha_f))


@dataclass
class LossReport:
    box: Tensor
    iou: Tensor
    cls: Tensor
    d: Tensor
    total: Tensor
    matched: int

    def as_dict(self) -> dict:
        return {"box": self.box.item(), "iou": self.iou.item(), "cls": self.cls.item(), "d": self.d.item(),
                "total": self.total.item(), "matched": self.matched}


def total_loss(preds, gts: list[GroundTruthHoi], assignment: Assignment | None,
               weights: MatchWeights = MatchWeights(), gamma_f: float = 2.0, alpha_f: float = 0.25,
               class_index: dict[int, int] | None = None, distance_kind: str = "absolute") -> LossReport:
    """Objective for one image; see :func:`batch_loss` for several."""
    return batch_loss([preds], [gts], [assignment], weights, gamma_f, alpha_f, class_index, distance_kind)


def batch_loss(preds_list, gts_list, assignments, weights: MatchWeights = MatchWeights(),
               gamma_f: float = 2.0, alpha_f: float = 0.25, class_index: dict[int, int] | None = None,
               distance_kind: str = "absolute") -> LossReport:
    """Box, GIoU and distance terms average over matched pairs; the focal
    classification terms on interaction logits and box confidence split into
    positives (averaged over matched pairs) and negatives (averaged over all
    queries)."""
    n_pos = 0
    n_query = 0
    box_terms, iou_terms, d_sum = [], [], 0.0
    cls_pos, cls_neg = [], []
    for preds, gts, asg in zip(preds_list, gts_list, assignments):
        r = len(preds)
        n_query += r
        if preds.logits is None:
            raise LossError("predictions carry no interaction logits")
        ncls = preds.logits.shape[-1]
        cls_t = np.zeros((r, ncls))
        conf_t = np.zeros(r)
        if gts:
            if asg is None:
                raise LossError("ground truth present but no assignment given")
            rows, cols = np.asarray(asg.pred_idx), np.asarray(asg.gt_idx)
            if len(cols) != len(gts) or (len(rows) and (rows.max() >= r or rows.min() < 0)) \
                    or len(set(rows.tolist())) != len(rows):
                raise LossError("assignment does not fit these predictions and ground truths")
            for i, j in zip(rows, cols):
                g = gts[j]
                c = g.interaction if class_index is None else class_index[g.interaction]
                cls_t[i, c] = 1.0
                conf_t[i] = 1.0
                d_sum += abs(float(preds.lv[i]) - gt_distance(g, distance_kind))
            gh = np.array([gts[j].b_h for j in cols])
            go = np.array([gts[j].b_o for j in cols])
            ph, po = T.take(preds.boxes_h, rows, 0), T.take(preds.boxes_o, rows, 0)
            box_terms.append(T.tsum(T.tabs(ph - gh)) * 0.25 + T.tsum(T.tabs(po - go)) * 0.25)
            iou_terms.append(T.tsum(1.0 - giou(ph, gh)) + T.tsum(1.0 - giou(po, go)))
            n_pos += len(cols)
        f_cls = focal_terms(preds.logits, cls_t, gamma_f, alpha_f)
        zc = preds.conf_logit if preds.conf_logit is not None else \
            T.log(preds.confidence) - T.log(1.0 - preds.confidence)
        f_conf = focal_terms(zc, conf_t, gamma_f, alpha_f)
        cls_pos.append(T.tsum(f_cls * cls_t) + T.tsum(f_conf * conf_t))
        cls_neg.append(T.tsum(f_cls * (1.0 - cls_t)) + T.tsum(f_conf * (1.0 - conf_t)))
    zero = Tensor(0.0)
    denom = max(n_pos, 1)
    box = _sum(box_terms, zero) * (1.0 / denom)
    iou = _sum(iou_terms, zero) * (1.0 / denom)
    cls = _sum(cls_pos, zero) * (1.0 / denom) + _sum(cls_neg, zero) * (1.0 / max(n_query, 1))
    d = Tensor(d_sum / denom)
    total = box * weights.box + iou * weights.iou + cls * weights.cls + d * weights.d
    return LossReport(box, iou, cls, d, total, n_pos)


def _sum(terms: list[Tensor], zero: Tensor) -> Tensor:
    out = zero
    for t in terms:
        out = out + t
    return out
