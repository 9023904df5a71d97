"""AdamW: Adam moments with weight decay applied directly to the weights."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.requires_grad and p.grad is None:
                raise RuntimeError(f"parameter {p.name or '<unnamed>'} has no gradient; run backward() first")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.requires_grad:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            # decay uses the pre-update weights and never enters m or v
            p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, names: list[str]) -> dict[str, np.ndarray]:
        out = {"optim/t": np.array([float(self.t)])}
        for name, m, v in zip(names, self.m, self.v):
            out[f"optim/m/{name}"] = m
            out[f"optim/v/{name}"] = v
        return out

    def load_state_arrays(self, names: list[str], arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["optim/t"][0])
        for i, name in enumerate(names):
            self.m[i] = arrays[f"optim/m/{name}"].copy()
            self.v[i] = arrays[f"optim/v/{name}"].copy()


def adamw_step(params: list[Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.999),
               weight_decay: float = 1e-4, state: AdamW | None = None) -> AdamW:
    """One AdamW update. Pass the returned state back in to continue the moment estimates."""
    if state is None:
        state = AdamW(params, lr=lr, betas=betas, weight_decay=weight_decay)
    else:
        state.lr, state.betas, state.weight_decay = lr, betas, weight_decay
    state.step()
    return state
