"""Shared set-prediction decoder run in parallel over several feature-map levels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import sincos_point
from .numcore import nn
from .numcore import tensor as T
from .numcore.tensor import Tensor


class DecoderError(ValueError):
    pass


def normalized_level(level_pos: int, num_levels: int) -> float:
    """Rank of a level within the chosen set, mapped into (0, 1)."""
    if num_levels < 1 or not 0 <= level_pos < num_levels:
        raise DecoderError(f"level position {level_pos} outside 0..{num_levels - 1}")
    return (level_pos + 1) / (num_levels + 1)


def check_levels(levels, num_blocks: int) -> tuple[int, ...]:
    levels = tuple(int(v) for v in levels)
    if not levels:
        raise DecoderError("level set is empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise DecoderError(f"levels {list(levels)} must be strictly increasing")
    if levels[0] < 1 or levels[-1] > num_blocks:
        raise DecoderError(f"levels {list(levels)} outside the available blocks 1..{num_blocks}")
    return levels


class DecoderLayer(nn.Module):
    """Post-LN layer: self-attention over queries, cross-attention into the memory, FFN."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, ffn: int):
        self.self_attn = nn.Attention(rng, dim, heads)
        self.ln1 = nn.LayerNorm(dim)
        self.cross_attn = nn.Attention(rng, dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ffn = nn.MLP(rng, dim, ffn, dim)
        self.ln3 = nn.LayerNorm(dim)

    def __call__(self, x: Tensor, qpos: Tensor, memory: Tensor, keys: Tensor) -> Tensor:
        q = x + qpos
        x = self.ln1(x + self.self_attn(q, q, x))
        x = self.ln2(x + self.cross_attn(x + qpos, keys, memory))
        return self.ln3(x + self.ffn(x))


@dataclass(frozen=True)
class HoiPrediction:
    b_h: np.ndarray
    b_o: np.ndarray
    c: float
    logits: np.ndarray | None
    level_index: int


@dataclass
class PredictionSet:
    """Predictions for one image, level-major: row r comes from level r // M, query r % M."""

    confidence: Tensor   # (R,)
    boxes_h: Tensor      # (R, 4) cxcywh
    boxes_o: Tensor      # (R, 4)
    embeddings: Tensor   # (R, C_t) unit vectors
    level_index: np.ndarray
    lv: np.ndarray
    logits: Tensor | None = None
    conf_logit: Tensor | None = None

    def __len__(self) -> int:
        return self.boxes_h.shape[0]

    def records(self) -> list[HoiPrediction]:
        out = []
        for r in range(len(self)):
            out.append(HoiPrediction(
                self.boxes_h.data[r].copy(), self.boxes_o.data[r].copy(), float(self.confidence.data[r]),
                None if self.logits is None else self.logits.data[r].copy(), int(self.level_index[r])))
        return out


class HoiDecoder(nn.Module):
    def __init__(self, rng: np.random.Generator, width: int = 32, text_width: int = 32, num_queries: int = 10,
                 num_layers: int = 4, heads: int = 4, ffn: int = 64, levels=(6, 9, 12), num_blocks: int = 12):
        self.levels = check_levels(levels, num_blocks)
        self.num_blocks = num_blocks
        self.num_queries = num_queries
        self.width = width
        self.mem_ln = nn.LayerNorm(width)
        self.mem_proj = nn.Linear(rng, width, width)
        self.queries = nn.param(rng.normal(0.0, 1.0, size=(num_queries, width)))
        # per-query anchor centres (human x, y, object x, y) in logit space
        a = rng.uniform(0.1, 0.9, size=(num_queries, 4))
        self.anchors = nn.param(np.log(a) - np.log1p(-a))
        self.anchor_proj = nn.Linear(rng, 2 * width, width)
        self.layers = [DecoderLayer(rng, width, heads, ffn) for _ in range(num_layers)]
        self.box_mlp = nn.MLP(rng, width, width, 9)
        self.cls_proj = nn.Linear(rng, width, text_width)

    def box_head(self, h: Tensor, anchors: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """(..., C) -> confidence (...,), human box (..., 4), object box (..., 4), all sigmoid-squashed.

        ``anchors`` (..., 4) shifts the human and object centres in logit space.
        """
        _, conf, bh, bo = self._heads(h, anchors)
        return conf, bh, bo

    def _heads(self, h: Tensor, anchors: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        if h.shape[-1] != self.width:
            raise DecoderError(f"hidden width {h.shape[-1]} != {self.width}")
        raw = self.box_mlp(h)
        if anchors is not None:
            zero1 = Tensor(np.zeros(anchors.shape[:-1] + (1,)))
            zero2 = Tensor(np.zeros(anchors.shape[:-1] + (2,)))
            raw = raw + T.concat([zero1, anchors[..., 0:2], zero2, anchors[..., 2:4], zero2], axis=-1)
        out = T.sigmoid(raw)
        return raw[..., 0], out[..., 0], out[..., 1:5], out[..., 5:9]

    def query_pos(self) -> Tensor:
        centres = T.sigmoid(self.anchors)
        codes = T.concat([sincos_point(centres[:, 0:2], self.width), sincos_point(centres[:, 2:4], self.width)],
                         axis=-1)
        return self.anchor_proj(codes)

    def cls_head(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.width:
            raise DecoderError(f"hidden width {h.shape[-1]} != {self.width}")
        return T.l2_normalize(self.cls_proj(h))

    def hidden(self, maps: np.ndarray, pos: np.ndarray | None = None) -> Tensor:
        """Shared decoding of every selected level; maps is (num_blocks, B, S, C).

        Returns hidden states of shape (B, K, M, C).
        """
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim == 3:
            maps = maps[:, None]
        if maps.shape[0] < self.levels[-1]:
            raise DecoderError(f"level {self.levels[-1]} requested but only {maps.shape[0]} maps given")
        sel = maps[[v - 1 for v in self.levels]].transpose(1, 0, 2, 3)  # (B, K, S, C)
        b, k = sel.shape[:2]
        memory = self.mem_proj(self.mem_ln(Tensor(sel)))
        keys = memory + pos if pos is not None else memory
        x = T.broadcast_to(self.queries, (b, k) + self.queries.shape)
        qpos = self.query_pos()
        for layer in self.layers:
            x = layer(x, qpos, memory, keys)
        return x

    def decode_batch(self, maps: np.ndarray, pos: np.ndarray | None = None) -> list[PredictionSet]:
        h = self.hidden(maps, pos)
        b, k, m, _ = h.shape
        zc, conf, bh, bo = self._heads(h, self.anchors)
        emb = self.cls_head(h)
        level_index = np.repeat(np.arange(k), m)
        lv = np.array([normalized_level(i, k) for i in level_index])
        out = []
        for i in range(b):
            out.append(PredictionSet(conf[i].reshape(k * m), bh[i].reshape(k * m, 4), bo[i].reshape(k * m, 4),
                                     emb[i].reshape(k * m, -1), level_index, lv,
                                     conf_logit=zc[i].reshape(k * m)))
        return out

    def decode(self, maps, pos: np.ndarray | None = None) -> PredictionSet:
        """One image: maps is a list of per-block (S, C) arrays or a (num_blocks, S, C) array."""
        arr = np.stack([np.asarray(x, dtype=np.float64) for x in maps]) if isinstance(maps, (list, tuple)) \
            else np.asarray(maps, dtype=np.float64)
        if arr.ndim != 3:
            raise DecoderError(f"expected per-block (S, C) maps, got array of shape {arr.shape}")
        return self.decode_batch(arr[:, None], pos)[0]
