"""Frozen toy visual and text encoders, plus the learnable prompt context.

Both encoders are small pre-LN transformers with seeded Gaussian weights that
never receive gradients. The visual encoder exposes the output of every
block so the decoder can pick feature levels; the text encoder maps a token
sequence to a unit-norm vector in the joint space.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import nn
from .numcore import tensor as T
from .numcore.tensor import Tensor, no_grad

DATA_DIR = Path(__file__).parent / "data"


class EncoderError(ValueError):
    pass


def sincos_point(xy, dim: int) -> Tensor:
    """Sine/cosine codes for continuous points in the unit square; (..., 2) -> (..., dim)."""
    if dim % 4:
        raise EncoderError(f"2-D position codes need a width divisible by 4, got {dim}")
    quarter = dim // 4
    freqs = (2.0 * np.pi / (100.0 ** (np.arange(quarter) / quarter)))[None, :]
    xy = T.as_tensor(xy)
    ax = T.matmul(xy[..., 0:1], freqs)
    ay = T.matmul(xy[..., 1:2], freqs)
    return T.concat([T.sin(ax), T.cos(ax), T.sin(ay), T.cos(ay)], axis=-1)


def sincos_2d(grid: int, dim: int) -> np.ndarray:
    """Codes of the patch centres of a grid x grid layout, row-major."""
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    centres = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    return sincos_point((centres + 0.5) / grid, dim).data


def sincos_1d(length: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = 1.0 / (1000.0 ** (np.arange(half) / half))
    pos = np.arange(length)[:, None] * freqs
    return np.concatenate([np.sin(pos), np.cos(pos)], axis=1)


class Block(nn.Module):
    """Pre-LN transformer block."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, mlp_ratio: int = 4, branch_scale: float = 1.0):
        self.branch_scale = branch_scale
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.MLP(rng, dim, mlp_ratio * dim, dim)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h, mask) * self.branch_scale
        return x + self.mlp(self.ln2(x)) * self.branch_scale


@dataclass(frozen=True)
class VisualConfig:
    image_size: int = 32
    patch_size: int = 8
    width: int = 32
    num_blocks: int = 12
    heads: int = 4
    seed: int = 0
    # damped residual branches keep random deep blocks from collapsing every token onto one direction
    branch_scale: float = 0.5
    pixel_mean: float = 0.25
    pixel_std: float = 0.25

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise EncoderError(f"image size {self.image_size} is not divisible by patch size {self.patch_size}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2


class VisualEncoder(nn.Module):
    def __init__(self, config: VisualConfig = VisualConfig()):
        self.config = config
        rng = np.random.default_rng([config.seed, 1])
        c = config
        self.patch_proj = nn.Linear(rng, 3 * c.patch_size ** 2, c.width)
        self.class_token = nn.param(rng.normal(0.0, 1.0, size=(1, c.width)))
        self.blocks = [Block(rng, c.width, c.heads, branch_scale=c.branch_scale) for _ in range(c.num_blocks)]
        self.freeze()
        # slot 0 is the class token, which carries no position
        self.pos = np.concatenate([np.zeros((1, c.width)), sincos_2d(c.grid, c.width)])

    def patchify(self, images: np.ndarray) -> np.ndarray:
        c = self.config
        b = images.shape[0]
        g, p = c.grid, c.patch_size
        x = images.reshape(b, g, p, g, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return x.reshape(b, g * g, p * p * 3)

    def encode_images(self, images: np.ndarray) -> np.ndarray:
        """Feature maps for a batch: array of shape (num_blocks, B, num_patches + 1, width)."""
        images = np.asarray(images, dtype=np.float64)
        c = self.config
        if images.ndim != 4 or images.shape[1:] != (c.image_size, c.image_size, 3):
            raise EncoderError(f"expected images of shape (B, {c.image_size}, {c.image_size}, 3), "
                               f"got {images.shape}")
        with no_grad():
            pixels = (images - c.pixel_mean) / c.pixel_std
            tokens = self.patch_proj(Tensor(self.patchify(pixels)))
            cls = T.broadcast_to(self.class_token, (images.shape[0], 1, c.width))
            x = T.concat([cls, tokens], axis=1) + self.pos
            maps = []
            for block in self.blocks:
                x = block(x)
                maps.append(x.data)
        return np.stack(maps)

    def encode_image(self, image: np.ndarray) -> list[np.ndarray]:
        """Per-block feature maps X_1..X_N for one H x W x 3 image."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise EncoderError(f"expected an H x W x 3 image, got shape {image.shape}")
        return list(self.encode_images(image[None])[:, 0])


# -- text side --------------------------------------------------------------------------

_PUNCT = re.compile(r"[,.;:!?]")


def load_token_list(path=None) -> list[str]:
    path = Path(path) if path else DATA_DIR / "tokens.txt"
    tokens = [line.strip() for line in path.read_text().splitlines()]
    if any(not t for t in tokens):
        raise EncoderError(f"{path}: blank token line")
    if len(set(tokens)) != len(tokens):
        raise EncoderError(f"{path}: duplicate tokens")
    return tokens


class Tokenizer:
    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in _PUNCT.sub(" ", text.lower()).split():
            if word not in self.index:
                raise EncoderError(f"unknown token {word!r}")
            ids.append(self.index[word])
        return ids


@dataclass(frozen=True)
class TextConfig:
    width: int = 32
    depth: int = 2
    heads: int = 4
    max_len: int = 32
    seed: int = 0


class ContextTokens(nn.Module):
    def __init__(self, rng: np.random.Generator, width: int, n_prefix: int = 8, n_conjunct: int = 2):
        self.prefix = nn.param(rng.normal(0.0, 0.02, size=(n_prefix, width)))
        self.conjunct = nn.param(rng.normal(0.0, 0.02, size=(n_conjunct, width)))


class TextEncoder(nn.Module):
    def __init__(self, tokenizer: Tokenizer, config: TextConfig = TextConfig()):
        self.config = config
        self.tokenizer = tokenizer
        rng = np.random.default_rng([config.seed, 2])
        self.embedding = nn.param(rng.normal(0.0, 1.0, size=(len(tokenizer), config.width)))
        self.blocks = [Block(rng, config.width, config.heads) for _ in range(config.depth)]
        self.ln_final = nn.LayerNorm(config.width)
        self.proj = nn.Linear(rng, config.width, config.width, bias=False)
        self.freeze()
        self.pos = sincos_1d(config.max_len, config.width)
        self._desc_cache: dict[tuple[str, ...], np.ndarray] = {}
        self.description_encodes = 0

    def embed(self, ids: list[int]) -> np.ndarray:
        for i in ids:
            if not 0 <= i < len(self.tokenizer):
                raise EncoderError(f"token id {i} outside vocabulary of {len(self.tokenizer)}")
        return self.embedding.data[np.asarray(ids, dtype=np.int64)]

    def encode_embeddings(self, x: Tensor) -> Tensor:
        """(B, S, width) token embeddings -> (B, width) unit vectors, pooled at the last position."""
        s = x.shape[-2]
        if s > self.config.max_len:
            raise EncoderError(f"sequence of {s} tokens exceeds max length {self.config.max_len}")
        mask = np.triu(np.full((s, s), -1e9), k=1)
        x = x + self.pos[:s]
        for block in self.blocks:
            x = block(x, mask)
        last = self.ln_final(x[..., s - 1, :])
        return T.l2_normalize(self.proj(last))

    def encode_text(self, text: str) -> np.ndarray:
        with no_grad():
            return self.encode_embeddings(Tensor(self.embed(self.tokenizer.encode(text))[None])).data[0]

    def encode_hoi_text(self, ctx: ContextTokens, action_tokens: list[int], object_tokens: list[int]) -> Tensor:
        """One interaction name: [prefix ctx, action, conjunct ctx, object] -> unit vector."""
        return self.encode_hoi_batch(ctx, [(action_tokens, object_tokens)])[0]

    def encode_hoi_batch(self, ctx: ContextTokens, names: list[tuple[list[int], list[int]]]) -> Tensor:
        """Embeddings for many interaction names, batched by token-length pattern."""
        groups: dict[tuple[int, int], list[int]] = {}
        for i, (a, o) in enumerate(names):
            groups.setdefault((len(a), len(o)), []).append(i)
        parts, order = [], []
        w = self.config.width
        for (la, lo), idx in sorted(groups.items()):
            g = len(idx)
            act = np.stack([self.embed(names[i][0]) for i in idx]).reshape(g, la, w)
            obj = np.stack([self.embed(names[i][1]) for i in idx]).reshape(g, lo, w)
            pre = T.broadcast_to(ctx.prefix, (g,) + ctx.prefix.shape)
            con = T.broadcast_to(ctx.conjunct, (g,) + ctx.conjunct.shape)
            seq = T.concat([pre, Tensor(act), con, Tensor(obj)], axis=1)
            parts.append(self.encode_embeddings(seq))
            order.extend(idx)
        out = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        return T.take(out, np.argsort(order), axis=0)

    def encode_descriptions(self, bank) -> np.ndarray:
        """Description embeddings (N, width); computed once per distinct bank, then cached.

        ``bank`` is a :class:`~cmdse.semantics.DescriptionBank` or a list of strings
        ordered by interaction id.
        """
        texts = bank.texts() if hasattr(bank, "texts") else list(bank)
        key = tuple(texts)
        if key not in self._desc_cache:
            self.description_encodes += 1
            self._desc_cache[key] = np.stack([self.encode_text(t) for t in texts])
        return self._desc_cache[key]
