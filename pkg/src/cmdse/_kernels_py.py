"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import math

import numpy as np

_INF = math.inf


def lsa_lex(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Minimise sum primary, then sum secondary, over injective maps cols -> rows.

    Potentials and slacks are (primary, secondary) pairs compared
    lexicographically; the shortest-augmenting-path Hungarian method is valid
    over any totally ordered abelian group, so this is exact whenever the
    arithmetic is.
    """
    A = np.asarray(primary, dtype=np.float64).tolist()
    S = np.asarray(secondary, dtype=np.float64).tolist()
    m = len(A)
    n = len(A[0]) if m else 0
    u1 = [0.0] * (n + 1)
    u2 = [0.0] * (n + 1)
    v1 = [0.0] * (m + 1)
    v2 = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        m1 = [_INF] * (m + 1)
        m2 = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            d1 = d2 = _INF
            j1 = 0
            ui1, ui2 = u1[i0], u2[i0]
            for j in range(1, m + 1):
                if used[j]:
                    continue
                c1 = A[j - 1][i0 - 1] - ui1 - v1[j]
                c2 = S[j - 1][i0 - 1] - ui2 - v2[j]
                if c1 < m1[j] or (c1 == m1[j] and c2 < m2[j]):
                    m1[j] = c1
                    m2[j] = c2
                    way[j] = j0
                if m1[j] < d1 or (m1[j] == d1 and m2[j] < d2):
                    d1 = m1[j]
                    d2 = m2[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u1[p[j]] += d1
                    u2[p[j]] += d2
                    v1[j] -= d1
                    v2[j] -= d2
                else:
                    m1[j] -= d1
                    m2[j] -= d2
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def _iou(a, b) -> float:
    ax0, ax1 = a[0] - 0.5 * a[2], a[0] + 0.5 * a[2]
    ay0, ay1 = a[1] - 0.5 * a[3], a[1] + 0.5 * a[3]
    bx0, bx1 = b[0] - 0.5 * b[2], b[0] + 0.5 * b[2]
    by0, by1 = b[1] - 0.5 * b[3], b[1] + 0.5 * b[3]
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0.0 else 0.0


def greedy_match(det_img, det_h, det_o, gt_img, gt_h, gt_o, thresh: float) -> np.ndarray:
    det_img = np.asarray(det_img).tolist()
    gt_img = np.asarray(gt_img).tolist()
    det_h, det_o = np.asarray(det_h).tolist(), np.asarray(det_o).tolist()
    gt_h, gt_o = np.asarray(gt_h).tolist(), np.asarray(gt_o).tolist()
    by_img: dict[int, list[int]] = {}
    for g, img in enumerate(gt_img):
        by_img.setdefault(img, []).append(g)
    used = [False] * len(gt_img)
    out = np.full(len(det_img), -1, dtype=np.int64)
    for d, img in enumerate(det_img):
        best, best_score = -1, -1.0
        for g in by_img.get(img, ()):
            if used[g]:
                continue
            ih = _iou(det_h[d], gt_h[g])
            if ih <= thresh:
                continue
            io = _iou(det_o[d], gt_o[g])
            if io <= thresh:
                continue
            s = min(ih, io)
            if s > best_score:
                best_score, best = s, g
        if best >= 0:
            used[best] = True
            out[d] = best
    return out
