"""Kernel dispatch: the compiled extension when it imports, else the Python twins.

Set ``CMDSE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _kernels_py as python_impl

compiled_impl: ModuleType | None = None
if os.environ.get("CMDSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_impl  # type: ignore[no-redef]
    except ImportError:
        compiled_impl = None

BACKEND = "compiled" if compiled_impl is not None else "python"


def available() -> dict[str, ModuleType]:
    out = {"python": python_impl}
    if compiled_impl is not None:
        out["compiled"] = compiled_impl
    return out


def lsa_lex(primary, secondary, impl: ModuleType | None = None) -> np.ndarray:
    p = np.ascontiguousarray(primary, dtype=np.float64)
    s = np.ascontiguousarray(secondary, dtype=np.float64)
    if p.shape != s.shape or p.ndim != 2:
        raise ValueError(f"lsa_lex: primary {p.shape} and secondary {s.shape} must be equal 2-D shapes")
    if p.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    return (impl or compiled_impl or python_impl).lsa_lex(p, s)


def greedy_match(det_img, det_h, det_o, gt_img, gt_h, gt_o, thresh: float = 0.5,
                 impl: ModuleType | None = None) -> np.ndarray:
    def boxes(a):
        return np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)

    def ids(a):
        return np.ascontiguousarray(a, dtype=np.int64).reshape(-1)

    return (impl or compiled_impl or python_impl).greedy_match(
        ids(det_img), boxes(det_h), boxes(det_o), ids(gt_img), boxes(gt_h), boxes(gt_o), float(thresh))
