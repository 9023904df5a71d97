"""Deterministic synthetic HOI scenes with a controlled human-object distance mixture.

Each interaction is drawn as two anti-aliased rectangles. The human box is
split into three horizontal bands (head: mouth/eye, torso: arm/hand, legs:
leg/foot); a band half is painted with the colour of the state word the
description bank gives that body part for the interaction's action, so the
bank's text is visible in the pixels. Objects get an object-specific colour
with a checker overlay. Boxes are continuous, so the human-object centre
distance equals the sampled value exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .matching import GroundTruthHoi, ho_distance
from .semantics import BODY_PARTS, DescriptionBank, Vocabulary, load_description_bank, load_vocabulary

IMAGE_DTYPE = "<f4"
# body part -> (band, half): band 0 is the top of the box
_PART_SLOT = {"mouth": (0, 0), "eye": (0, 1), "arm": (1, 0), "hand": (1, 1), "leg": (2, 0), "foot": (2, 1)}
_NEUTRAL = np.array([0.5, 0.5, 0.5])


class GeneratorError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    image_size: int = 32
    num_train: int = 400
    num_test: int = 100
    min_hois: int = 1
    max_hois: int = 3
    near: tuple[float, float] = (0.05, 0.3)
    far: tuple[float, float] = (0.7, 1.0)
    near_weight: float = 0.5
    unseen_fraction: float = 0.2
    box_size: tuple[float, float] = (0.15, 0.28)
    zipf_exponent: float = 1.0
    background_noise: float = 0.05

    def __post_init__(self):
        for name in ("near", "far", "box_size"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not 0.0 <= self.unseen_fraction < 1.0:
            raise GeneratorError(f"unseen_fraction must lie in [0, 1), got {self.unseen_fraction}")
        if not 0.0 <= self.near_weight <= 1.0:
            raise GeneratorError(f"near_weight must lie in [0, 1], got {self.near_weight}")
        if not 1 <= self.min_hois <= self.max_hois:
            raise GeneratorError(f"need 1 <= min_hois <= max_hois, got {self.min_hois}..{self.max_hois}")
        for name in ("near", "far"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise GeneratorError(f"{name} range {lo}..{hi} is invalid")
        lo, hi = self.box_size
        if not 0.0 < lo <= hi < 0.5:
            raise GeneratorError(f"box_size range {lo}..{hi} must lie in (0, 0.5)")
        if self.far[1] > math.sqrt(2) * (1.0 - hi):
            raise GeneratorError(f"far distance {self.far[1]} cannot fit boxes of size {hi} in the unit square")
        if self.num_train < 0 or self.num_test < 0 or self.image_size < 1:
            raise GeneratorError("scene counts must be nonnegative and image_size positive")

    @classmethod
    def from_json(cls, doc: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise GeneratorError(f"unknown generator spec keys {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SceneRecord:
    image_id: int
    image: np.ndarray
    hois: list[GroundTruthHoi]
    seed: int = 0


@dataclass
class Split:
    scenes: list[SceneRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scenes)

    def images(self) -> np.ndarray:
        if not self.scenes:
            return np.zeros((0, 0, 0, 3), dtype=np.float32)
        return np.stack([s.image for s in self.scenes])


@dataclass
class Dataset:
    vocab: Vocabulary
    train: Split
    test: Split
    spec: GeneratorSpec
    seed: int

    def train_counts(self) -> list[int]:
        counts = [0] * self.vocab.num_interactions
        for scene in self.train.scenes:
            for h in scene.hois:
                counts[h.interaction] += 1
        return counts


# -- splits and sampling ----------------------------------------------------------------

def choose_unseen(vocab: Vocabulary, fraction: float, seed: int) -> list[int]:
    """Hold out round(fraction * N) interactions while every action and object stays seen."""
    n = vocab.num_interactions
    want = int(round(fraction * n))
    rng = np.random.default_rng([seed, 101])
    order = rng.permutation(n)
    a_left = np.bincount([a for a, _ in vocab.interactions], minlength=len(vocab.actions))
    o_left = np.bincount([o for _, o in vocab.interactions], minlength=len(vocab.objects))
    held: list[int] = []
    for i in order:
        if len(held) == want:
            break
        a, o = vocab.interactions[i]
        if a_left[a] > 1 and o_left[o] > 1:
            a_left[a] -= 1
            o_left[o] -= 1
            held.append(int(i))
    if len(held) < want:
        raise GeneratorError(f"cannot hold out {want} interactions and keep every action and object seen")
    return sorted(held)


def class_weights(ids: list[int], exponent: float, seed: int) -> np.ndarray:
    """Zipf-like frequencies over ``ids`` with a seeded rank order."""
    rank = np.random.default_rng([seed, 102]).permutation(len(ids))
    w = 1.0 / (rank + 1.0) ** exponent
    return w / w.sum()


def _place_pair(rng: np.random.Generator, g: float, spec: GeneratorSpec):
    """Human and object boxes (cxcywh) whose centres are exactly g apart, inside the unit square."""
    lo, hi = spec.box_size
    for _ in range(1000):
        wh = rng.uniform(lo, hi, size=4)
        hw, hh, ow, oh = wh
        theta = rng.uniform(0.0, 2.0 * math.pi)
        dx, dy = g * math.cos(theta), g * math.sin(theta)
        # the human centre range that keeps both boxes inside
        x_lo = max(hw / 2, ow / 2 - dx)
        x_hi = min(1 - hw / 2, 1 - ow / 2 - dx)
        y_lo = max(hh / 2, oh / 2 - dy)
        y_hi = min(1 - hh / 2, 1 - oh / 2 - dy)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        hx, hy = rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)
        return (hx, hy, hw, hh), (hx + dx, hy + dy, ow, oh)
    raise GeneratorError(f"could not place a pair at distance {g:.3f}")


def _sample_distance(rng: np.random.Generator, spec: GeneratorSpec) -> float:
    lo, hi = spec.near if rng.uniform() < spec.near_weight else spec.far
    return float(rng.uniform(lo, hi))


# -- rendering --------------------------------------------------------------------------

def state_palette(bank: DescriptionBank) -> dict[str, np.ndarray]:
    """A fixed colour per state word appearing in the bank's descriptions."""
    words = sorted({w for text in bank.texts() for w in _states(text).values()})
    rng = np.random.default_rng(2024)
    return {w: rng.uniform(0.05, 0.95, size=3) for w in words}


def _states(text: str) -> dict[str, str]:
    """Body part -> state word, read from a "part state, part state ..." description."""
    out = {}
    words = text.replace(",", " ").split()
    for i, w in enumerate(words[:-1]):
        if w in BODY_PARTS and words[i + 1] not in BODY_PARTS:
            out[w] = words[i + 1]
    return out


def object_colours(num_objects: int) -> np.ndarray:
    return np.random.default_rng(2025).uniform(0.1, 0.9, size=(num_objects, 3))


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each of n unit pixels on [0, n) covered by the interval [lo*n, hi*n)."""
    edges = np.arange(n + 1, dtype=np.float64)
    return np.clip(np.minimum(edges[1:], hi * n) - np.maximum(edges[:-1], lo * n), 0.0, 1.0)


def _paint(img: np.ndarray, x0: float, y0: float, x1: float, y1: float, colour) -> None:
    n = img.shape[0]
    cov = _coverage(y0, y1, n)[:, None] * _coverage(x0, x1, n)[None, :]
    colour = np.asarray(colour, dtype=np.float64)
    if colour.ndim == 1:
        colour = colour[None, None, :]
    img *= 1.0 - cov[..., None]
    img += cov[..., None] * colour


class Renderer:
    def __init__(self, vocab: Vocabulary, bank: DescriptionBank, image_size: int):
        self.vocab = vocab
        self.size = image_size
        palette = state_palette(bank)
        self.human_slots: list[dict[tuple[int, int], np.ndarray]] = []
        for i in range(vocab.num_interactions):
            states = _states(bank.entries[i].text)
            self.human_slots.append({_PART_SLOT[p]: palette[s] for p, s in states.items()})
        self.obj_colour = object_colours(len(vocab.objects))

    def draw_human(self, img: np.ndarray, box, interaction: int) -> None:
        cx, cy, w, h = box
        x0, y0 = cx - w / 2, cy - h / 2
        slots = self.human_slots[interaction]
        for band in range(3):
            for half in range(2):
                colour = slots.get((band, half), _NEUTRAL)
                _paint(img, x0 + half * w / 2, y0 + band * h / 3, x0 + (half + 1) * w / 2,
                       y0 + (band + 1) * h / 3, colour)

    def draw_object(self, img: np.ndarray, box, obj: int) -> None:
        cx, cy, w, h = box
        n = self.size
        yy, xx = np.mgrid[0:n, 0:n]
        checker = ((xx + yy) % 2)[..., None] * 0.25 - 0.125
        base = np.clip(self.obj_colour[obj][None, None, :] + checker, 0.0, 1.0)
        _paint(img, cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, base)

    def render(self, hois: list[GroundTruthHoi], rng: np.random.Generator, noise: float) -> np.ndarray:
        img = rng.uniform(0.0, noise, size=(self.size, self.size, 3)) if noise > 0 \
            else np.zeros((self.size, self.size, 3))
        for g in hois:
            self.draw_object(img, g.b_o, g.object)
            self.draw_human(img, g.b_h, g.interaction)
        return img.astype(np.float32)


# -- generation -------------------------------------------------------------------------

def make_scene(index: int, split_code: int, class_ids: list[int], weights: np.ndarray, vocab: Vocabulary,
               renderer: Renderer, spec: GeneratorSpec, seed: int) -> SceneRecord:
    rng = np.random.default_rng([seed, split_code, index])
    k = int(rng.integers(spec.min_hois, spec.max_hois + 1))
    hois = []
    for _ in range(k):
        iid = int(class_ids[rng.choice(len(class_ids), p=weights)])
        g = _sample_distance(rng, spec)
        b_h, b_o = _place_pair(rng, g, spec)
        a, o = vocab.interactions[iid]
        hois.append(GroundTruthHoi(b_h, b_o, a, o, iid))
    return SceneRecord(index, renderer.render(hois, rng, spec.background_noise), hois, seed)


def generate(spec: GeneratorSpec = GeneratorSpec(), seed: int = 0, vocab: Vocabulary | None = None,
             bank: DescriptionBank | None = None) -> Dataset:
    """Train and test splits; unseen interactions appear only in the test split."""
    vocab = vocab or load_vocabulary()
    bank = bank or load_description_bank(vocab=vocab)
    unseen = set(choose_unseen(vocab, spec.unseen_fraction, seed))
    vocab = vocab.with_seen([i not in unseen for i in range(vocab.num_interactions)])
    seen_ids = vocab.seen_ids()
    renderer = Renderer(vocab, bank, spec.image_size)
    w_train = class_weights(seen_ids, spec.zipf_exponent, seed)
    all_ids = list(range(vocab.num_interactions))
    w_test = np.full(len(all_ids), 1.0 / len(all_ids))
    train = Split([make_scene(i, 0, seen_ids, w_train, vocab, renderer, spec, seed) for i in range(spec.num_train)])
    test = Split([make_scene(i, 1, all_ids, w_test, vocab, renderer, spec, seed) for i in range(spec.num_test)])
    return Dataset(vocab, train, test, spec, seed)


# -- storage ----------------------------------------------------------------------------

def _hoi_json(g: GroundTruthHoi) -> dict:
    return {"b_h": list(g.b_h), "b_o": list(g.b_o), "action": g.action, "object": g.object}


def export_split(split: Split, path) -> None:
    """Write ``annotations.jsonl``, ``images.bin`` and ``images.json`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"image_id": s.image_id, "seed": s.seed, "hois": [_hoi_json(h) for h in s.hois]})
             for s in split.scenes]
    (path / "annotations.jsonl").write_text("".join(line + "\n" for line in lines))
    images = split.images().astype(IMAGE_DTYPE)
    (path / "images.bin").write_bytes(images.tobytes())
    manifest = {"dtype": IMAGE_DTYPE, "shape": list(images.shape), "image_ids": [s.image_id for s in split.scenes]}
    (path / "images.json").write_text(json.dumps(manifest) + "\n")


def _parse_hoi(doc, vocab: Vocabulary, where: str) -> GroundTruthHoi:
    try:
        b_h = [float(v) for v in doc["b_h"]]
        b_o = [float(v) for v in doc["b_o"]]
        a, o = int(doc["action"]), int(doc["object"])
    except (KeyError, TypeError, ValueError):
        raise DatasetFormatError(f"{where}: HOI needs b_h, b_o, action and object") from None
    if len(b_h) != 4 or len(b_o) != 4:
        raise DatasetFormatError(f"{where}: boxes need four coordinates")
    try:
        iid = vocab.interaction_id(a, o)
    except ValueError:
        raise DatasetFormatError(f"{where}: ({a}, {o}) is not an interaction in the vocabulary") from None
    return GroundTruthHoi(b_h, b_o, a, o, iid)


def import_split(path, vocab: Vocabulary) -> Split:
    path = Path(path)
    try:
        raw = (path / "annotations.jsonl").read_bytes()
        manifest = json.loads((path / "images.json").read_text())
        blob = (path / "images.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing dataset file {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path / 'images.json'}: {exc}") from None
    records = []
    offset = 0
    for lineno, line in enumerate(raw.split(b"\n"), start=1):
        start, offset = offset, offset + len(line) + 1
        if not line.strip():
            continue
        where = f"{path / 'annotations.jsonl'} line {lineno}"
        try:
            doc = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            pos = getattr(exc, "pos", 0)
            raise DatasetFormatError(f"{where} (byte offset {start + pos}): malformed record") from None
        if not isinstance(doc, dict) or "image_id" not in doc or not isinstance(doc.get("hois"), list):
            raise DatasetFormatError(f"{where} (byte offset {start}): record needs image_id and hois")
        hois = [_parse_hoi(h, vocab, where) for h in doc["hois"]]
        records.append((int(doc["image_id"]), hois, int(doc.get("seed", 0))))
    shape = tuple(manifest.get("shape", ()))
    ids = manifest.get("image_ids", [])
    if manifest.get("dtype") != IMAGE_DTYPE or len(shape) != 4 or len(ids) != shape[0]:
        raise DatasetFormatError(f"{path / 'images.json'}: bad image manifest")
    need = int(np.prod(shape)) * 4
    if len(blob) != need:
        raise DatasetFormatError(f"{path / 'images.bin'}: expected {need} bytes, file ends at byte offset {len(blob)}")
    images = np.frombuffer(blob, dtype=IMAGE_DTYPE).reshape(shape) if need else np.zeros(shape, np.float32)
    by_id = {int(i): k for k, i in enumerate(ids)}
    if len(records) != len(ids):
        raise DatasetFormatError(f"{path}: {len(records)} annotation records but {len(ids)} images")
    scenes = []
    for image_id, hois, seed in records:
        if image_id not in by_id:
            raise DatasetFormatError(f"{path}: annotation for image {image_id} has no pixels")
        scenes.append(SceneRecord(image_id, np.array(images[by_id[image_id]], dtype=np.float32), hois, seed))
    return Split(scenes)


def save_dataset(ds: Dataset, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.json").write_text(json.dumps(ds.vocab.to_json(), indent=1) + "\n")
    meta = {"seed": ds.seed, "spec": ds.spec.to_json(), "train_counts": ds.train_counts()}
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    export_split(ds.train, out / "train")
    export_split(ds.test, out / "test")


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        vocab = Vocabulary.from_json(json.loads((path / "vocab.json").read_text()))
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"{path} is not a dataset directory (missing {Path(exc.filename).name})") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    return Dataset(vocab, import_split(path / "train", vocab), import_split(path / "test", vocab),
                   GeneratorSpec.from_json(meta["spec"]), int(meta["seed"]))


def scene_distance(g: GroundTruthHoi, kind: str = "absolute") -> float:
    return ho_distance(g.b_h, g.b_o, kind)
