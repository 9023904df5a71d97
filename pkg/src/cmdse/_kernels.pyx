# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: lexicographic Hungarian solver and greedy HOI matching.

Semantics are identical to :mod:`cmdse._kernels_py`; the test-suite runs both.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline bint lex_lt(double a1, double a2, double b1, double b2) nogil:
    return a1 < b1 or (a1 == b1 and a2 < b2)


def lsa_lex(double[:, :] primary, double[:, :] secondary):
    """Minimise sum primary, then sum secondary, over injective maps cols -> rows.

    ``primary`` and ``secondary`` are (rows, cols) with rows >= cols.
    Returns an int64 array giving the row assigned to each column.
    """
    cdef Py_ssize_t m = primary.shape[0]   # tasks = prediction rows
    cdef Py_ssize_t n = primary.shape[1]   # agents = ground-truth columns
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double d1, d2, c1, c2
    u1 = np.zeros(n + 1); u2 = np.zeros(n + 1)
    v1 = np.zeros(m + 1); v2 = np.zeros(m + 1)
    mv1 = np.empty(m + 1); mv2 = np.empty(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.int64)
    way_arr = np.zeros(m + 1, dtype=np.int64)
    used_arr = np.zeros(m + 1, dtype=np.uint8)
    cdef double[:] U1 = u1, U2 = u2, V1 = v1, V2 = v2, M1 = mv1, M2 = mv2
    cdef long long[:] p = p_arr, way = way_arr
    cdef unsigned char[:] used = used_arr

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            M1[j] = INFINITY
            M2[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            d1 = INFINITY
            d2 = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    c1 = primary[j - 1, i0 - 1] - U1[i0] - V1[j]
                    c2 = secondary[j - 1, i0 - 1] - U2[i0] - V2[j]
                    if lex_lt(c1, c2, M1[j], M2[j]):
                        M1[j] = c1
                        M2[j] = c2
                        way[j] = j0
                    if lex_lt(M1[j], M2[j], d1, d2):
                        d1 = M1[j]
                        d2 = M2[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    U1[p[j]] += d1
                    U2[p[j]] += d2
                    V1[j] -= d1
                    V2[j] -= d2
                else:
                    M1[j] -= d1
                    M2[j] -= d2
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
    cdef long long[:] o = out
    for j in range(1, m + 1):
        if p[j] != 0:
            o[p[j] - 1] = j - 1
    return out


cdef inline double box_iou(double[:, :] a, Py_ssize_t i, double[:, :] b, Py_ssize_t j) nogil:
    cdef double ax0 = a[i, 0] - 0.5 * a[i, 2], ax1 = a[i, 0] + 0.5 * a[i, 2]
    cdef double ay0 = a[i, 1] - 0.5 * a[i, 3], ay1 = a[i, 1] + 0.5 * a[i, 3]
    cdef double bx0 = b[j, 0] - 0.5 * b[j, 2], bx1 = b[j, 0] + 0.5 * b[j, 2]
    cdef double by0 = b[j, 1] - 0.5 * b[j, 3], by1 = b[j, 1] + 0.5 * b[j, 3]
    cdef double iw = min(ax1, bx1) - max(ax0, bx0)
    cdef double ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    cdef double inter = iw * ih
    cdef double union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def greedy_match(long long[:] det_img, double[:, :] det_h, double[:, :] det_o,
                 long long[:] gt_img, double[:, :] gt_h, double[:, :] gt_o, double thresh):
    """Greedy HOI matching for one class; detections must be pre-sorted by score.

    Each detection takes the unused ground truth of its image with the largest
    min(IoU_h, IoU_o), provided both IoUs exceed ``thresh`` strictly.
    Returns the matched ground-truth index per detection, or -1.
    """
    cdef Py_ssize_t nd = det_img.shape[0], ng = gt_img.shape[0]
    cdef Py_ssize_t d, g, best
    cdef double ih, io, score, best_score
    out = np.full(nd, -1, dtype=np.int64)
    used_arr = np.zeros(ng, dtype=np.uint8)
    cdef long long[:] o = out
    cdef unsigned char[:] used = used_arr
    for d in range(nd):
        best = -1
        best_score = -1.0
        for g in range(ng):
            if used[g] or gt_img[g] != det_img[d]:
                continue
            ih = box_iou(det_h, d, gt_h, g)
            if ih <= thresh:
                continue
            io = box_iou(det_o, d, gt_o, g)
            if io <= thresh:
                continue
            score = min(ih, io)
            if score > best_score:
                best_score = score
                best = g
        if best >= 0:
            used[best] = 1
            o[d] = best
    return out
