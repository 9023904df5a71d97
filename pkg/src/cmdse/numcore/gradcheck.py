"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(f: Callable[[], float], param: Tensor, h: float = 1e-5,
                 indices=None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. entries of ``param``.

    ``param.data`` is perturbed in place and restored. Only ``indices``
    (flat positions) are probed when given; other entries stay 0.
    """
    flat = param.data.reshape(-1)
    out = np.zeros(flat.shape)
    todo = range(flat.size) if indices is None else indices
    with no_grad():
        for i in todo:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dividing by ~0."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(build_loss: Callable[[], Tensor], params: list[Tensor], h: float = 1e-5,
                    rtol: float = 1e-4, floor: float = 1e-6) -> dict[str, float]:
    """Compare backprop gradients with central differences for every entry of ``params``.

    Returns the worst relative error per parameter (keyed by name or position).
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    def f():
        return build_loss().item()

    worst = {}
    for k, (p, a) in enumerate(zip(params, analytic)):
        n = numeric_grad(f, p, h)
        worst[p.name or str(k)] = float(relative_error(a, n, floor).max()) if p.size else 0.0
    return worst
