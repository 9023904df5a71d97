"""The full detector: frozen encoders, shared multi-level decoder, fused text classifier."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .decoder import HoiDecoder, PredictionSet
from .encoders import ContextTokens, TextConfig, TextEncoder, Tokenizer, VisualConfig, VisualEncoder, load_token_list
from .numcore import nn
from .numcore.tensor import Tensor
from .semantics import DescriptionBank, TextBank, Vocabulary, fuse_logits


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    width: int = 32
    num_blocks: int = 12
    text_depth: int = 2
    heads: int = 4
    levels: tuple[int, ...] = (6, 9, 12)
    num_queries: int = 10
    decoder_layers: int = 4
    ffn: int = 64
    encoder_seed: int = 0
    logit_scale: float = 1.0 / 0.07

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    def to_json(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


class HoiDetector(nn.Module):
    def __init__(self, vocab: Vocabulary, bank: DescriptionBank, config: ModelConfig = ModelConfig(),
                 seed: int = 0, learn_alpha_b: bool = True):
        self.config = config
        self.vocab = vocab
        self.visual = VisualEncoder(VisualConfig(config.image_size, config.patch_size, config.width,
                                                 config.num_blocks, config.heads, config.encoder_seed))
        tokenizer = Tokenizer(load_token_list())
        self.text = TextEncoder(tokenizer, TextConfig(config.width, config.text_depth, config.heads,
                                                      seed=config.encoder_seed))
        rng = np.random.default_rng([seed, 3])
        self.ctx = ContextTokens(rng, config.width)
        self.decoder = HoiDecoder(rng, config.width, config.width, config.num_queries, config.decoder_layers,
                                  config.heads, config.ffn, config.levels, config.num_blocks)
        self.alpha_hoi = nn.param(np.array(1.0))
        self.alpha_b = nn.param(np.array(0.5 if learn_alpha_b else 0.0), trainable=learn_alpha_b)
        self.t_b = self.text.encode_descriptions(bank)
        self.names = [(tokenizer.encode(a), tokenizer.encode(o)) for a, o in map(vocab.name, range(vocab.num_interactions))]

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        out = {f"visual.{k}": p.data for k, p in self.visual.named_parameters(include_frozen=True)}
        out.update({f"text.{k}": p.data for k, p in self.text.named_parameters(include_frozen=True)})
        return out

    def text_bank(self, class_ids=None) -> TextBank:
        ids = range(self.vocab.num_interactions) if class_ids is None else class_ids
        t_hoi = self.text.encode_hoi_batch(self.ctx, [self.names[i] for i in ids])
        return TextBank(t_hoi, self.t_b[np.asarray(list(ids), dtype=np.int64)], self.alpha_hoi, self.alpha_b)

    def features(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        """Frozen per-block maps (num_blocks, B, S, C), computed in chunks."""
        images = np.asarray(images, dtype=np.float64)
        if len(images) == 0:
            c = self.config
            return np.zeros((c.num_blocks, 0, (c.image_size // c.patch_size) ** 2 + 1, c.width))
        return np.concatenate([self.visual.encode_images(images[i:i + batch])
                               for i in range(0, len(images), batch)], axis=1)

    def forward(self, maps: np.ndarray, bank: TextBank) -> list[PredictionSet]:
        preds = self.decoder.decode_batch(maps, self.visual.pos)
        for p in preds:
            # cosines are bounded, so a fixed temperature spreads them out for the sigmoid
            p.logits = fuse_logits(p.embeddings, bank) * self.config.logit_scale
        return preds

    def __call__(self, images: np.ndarray, class_ids=None) -> list[PredictionSet]:
        return self.forward(self.features(images), self.text_bank(class_ids))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters(include_frozen=False)} | \
            ({} if self.alpha_b.requires_grad else {"alpha_b": self.alpha_b.data.copy()})

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if not self.alpha_b.requires_grad:
            params["alpha_b"] = self.alpha_b
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ValueError(f"checkpoint lacks parameters {missing[:5]}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arrays[k].shape} != model shape {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)
