"""Layer building blocks on top of :mod:`cmdse.numcore.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container; children are discovered through attributes."""

    def named_parameters(self, prefix: str = "", include_frozen: bool = False) -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and (val.requires_grad or include_frozen):
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + ".", include_frozen))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}.", include_frozen))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def freeze(self) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = False


def param(data: np.ndarray, name: str | None = None, trainable: bool = True) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=trainable, name=name)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, std: float | None = None,
                 bias: bool = True):
        std = 1.0 / np.sqrt(d_in) if std is None else std
        self.weight = param(rng.normal(0.0, std, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight) if x.ndim >= 2 else T.matmul(x.reshape(1, -1), self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = param(np.ones(dim))
        self.shift = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.eps) * self.gain + self.shift


class Attention(Module):
    """Multi-head scaled dot-product attention over (..., S, C) sequences."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, std: float | None = None):
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, dim, dim, std)
        self.k = Linear(rng, dim, dim, std, bias=False)  # a key bias shifts every score equally
        self.v = Linear(rng, dim, dim, std)
        self.o = Linear(rng, dim, dim, std)

    def _split(self, x: Tensor) -> Tensor:
        *lead, s, c = x.shape
        x = x.reshape(*lead, s, self.heads, c // self.heads)
        n = len(lead)
        return x.transpose(*range(n), n + 1, n, n + 2)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q, k, v = self._split(self.q(query)), self._split(self.k(key)), self._split(self.v(value))
        dh = q.shape[-1]
        n = q.ndim - 2
        scores = T.matmul(q, k.transpose(*range(n), n + 1, n)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v)
        lead = out.shape[:-3]
        out = out.transpose(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)
        return self.o(out.reshape(*lead, out.shape[-3], -1))


class MLP(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int, std: float | None = None):
        self.fc1 = Linear(rng, d_in, d_hidden, std)
        self.fc2 = Linear(rng, d_hidden, d_out, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
