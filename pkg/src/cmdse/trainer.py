"""Training, inference and ablation runs."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evalkit
from .decoder import PredictionSet
from .evalkit import Detection
from .losses import batch_loss
from .matching import MatchWeights, build_cost_matrix, gt_distance, hungarian
from .model import HoiDetector, ModelConfig
from .numcore.checkpoint import CheckpointError, load_checkpoint, save_arrays
from .numcore.optim import AdamW
from .numcore.tensor import backward, no_grad
from .semantics import DescriptionBank, Vocabulary, load_description_bank
from .synthgen import Dataset, load_dataset

STRATEGIES = ("low-small", "low-large")
DISTANCE_TYPES = ("absolute", "relative")
ALPHA_B_MODES = ("learned", "zero")
ABLATION_AXES = ("levels", "lambda_d", "distance_type", "prompts")
# the full-scale schedule; kept for reference, never executed at toy scale
REFERENCE_SCHEDULE = {"epochs": 80, "batch_size": 128, "gpus": 2}


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str = "data"
    out: str = "run"
    bank: str | None = None
    seed: int = 7
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lambda_b: float = 5.0
    lambda_iou: float = 2.0
    lambda_cls: float = 5.0
    lambda_d: float = 5.0
    gamma: float = 2.0
    gamma_f: float = 2.0
    alpha_f: float = 0.25
    levels: tuple[int, ...] = (6, 9, 12)
    num_queries: int = 10
    decoder_layers: int = 4
    distance_type: str = "absolute"
    strategy: str = "low-small"
    alpha_b: str = "learned"
    top_k: int = 20
    resume: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        checks = [
            (self.steps >= 0, "steps must be nonnegative"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be nonnegative"),
            (min(self.lambda_b, self.lambda_iou, self.lambda_cls, self.lambda_d) >= 0, "loss weights must be >= 0"),
            (self.gamma > 1, "gamma must exceed 1"),
            (self.gamma_f >= 0 and 0 <= self.alpha_f <= 1, "focal parameters out of range"),
            (self.num_queries >= 1 and self.decoder_layers >= 1, "num_queries and decoder_layers must be positive"),
            (self.distance_type in DISTANCE_TYPES, f"distance_type must be one of {DISTANCE_TYPES}"),
            (self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}"),
            (self.alpha_b in ALPHA_B_MODES, f"alpha_b must be one of {ALPHA_B_MODES}"),
            (self.top_k >= 1, "top_k must be positive"),
            (len(self.levels) >= 1 and all(1 <= v <= 12 for v in self.levels)
             and all(a < b for a, b in zip(self.levels, self.levels[1:])),
             "levels must be a strictly increasing list of block indices in 1..12"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def weights(self) -> MatchWeights:
        return MatchWeights(self.lambda_b, self.lambda_iou, self.lambda_cls, self.lambda_d)

    def model_config(self) -> ModelConfig:
        return ModelConfig(levels=self.levels, num_queries=self.num_queries, decoder_layers=self.decoder_layers)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["levels"] = list(self.levels)
        return d


PRESETS = {
    "reference": {},
    # same objective, a learning rate that moves a from-scratch decoder within a few hundred steps
    "toy": {"lr": 3e-3, "batch_size": 16},
}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    preset = doc.pop("preset", "reference")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    merged = {**PRESETS[preset], **doc}
    for key, val in merged.items():
        default = fields[key].default
        if key == "levels":
            if not isinstance(val, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in val):
                raise ConfigError("levels must be a list of integers")
        elif isinstance(default, bool) or default is None:
            if val is not None and not isinstance(val, str):
                raise ConfigError(f"{key} must be a string or null")
        elif isinstance(default, int) and (not isinstance(val, int) or isinstance(val, bool)):
            raise ConfigError(f"{key} must be an integer")
        elif isinstance(default, float) and (not isinstance(val, (int, float)) or isinstance(val, bool)):
            raise ConfigError(f"{key} must be a number")
        elif isinstance(default, str) and not isinstance(val, str):
            raise ConfigError(f"{key} must be a string")
    if base_dir is not None:
        for key in ("data", "out", "bank", "resume"):
            if isinstance(merged.get(key), str) and not os.path.isabs(merged[key]):
                merged[key] = str(base_dir / merged[key])
    seed_env = os.environ.get("CMDSE_SEED")
    if seed_env is not None:
        try:
            merged["seed"] = int(seed_env)
        except ValueError:
            raise ConfigError(f"CMDSE_SEED must be an integer, got {seed_env!r}") from None
    return RunConfig(**merged)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc, path.parent)


# -- helpers --------------------------------------------------------------------------

def _bank(config: RunConfig, vocab: Vocabulary) -> DescriptionBank:
    return load_description_bank(config.bank, vocab)


def build_model(config: RunConfig, vocab: Vocabulary) -> HoiDetector:
    return HoiDetector(vocab, _bank(config, vocab), config.model_config(), config.seed,
                       learn_alpha_b=config.alpha_b == "learned")


def frozen_hash(model: HoiDetector) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(model.frozen_arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def apply_strategy(preds: PredictionSet, strategy: str) -> PredictionSet:
    """low-large reverses the level order seen by the distance term."""
    if strategy == "low-large":
        preds.lv = 1.0 - preds.lv
    return preds


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 4, epoch]).permutation(n)


def batch_indices(seed: int, step: int, n: int, batch: int) -> tuple[int, np.ndarray]:
    per_epoch = math.ceil(n / batch)
    epoch, pos = divmod(step, per_epoch)
    order = epoch_order(seed, epoch, n)
    return epoch, order[pos * batch:(pos + 1) * batch]


def _json_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True) + "\n"


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    final_loss: float
    agreement: float | None
    agreement_counts: tuple[int, int]
    frozen_hash_before: str
    frozen_hash_after: str
    losses: list[float] = field(default_factory=list)


def _checkpoint_arrays(model: HoiDetector, opt: AdamW, names: list[str]) -> dict[str, np.ndarray]:
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    arrays.update(opt.state_arrays(names))
    return arrays


def save_checkpoint(path, model: HoiDetector, opt: AdamW, names: list[str], config: RunConfig, step: int) -> None:
    # output locations are left out so identical runs in different directories match byte for byte
    run = {k: v for k, v in config.to_json().items() if k not in ("out", "resume")}
    meta = {"model": model.config.to_json(), "run": run, "step": step,
            "num_interactions": model.vocab.num_interactions}
    save_arrays(path, _checkpoint_arrays(model, opt, names), meta)


def _params_from(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}


def _abort(out: Path, step: int, model: HoiDetector, batch, what: str, loss: dict | None = None):
    dump = out / f"nan_step{step}.ckpt"
    save_arrays(dump, {"images": np.stack([s.image for s in batch]),
                       **{f"param/{k}": v for k, v in model.state_arrays().items()}},
                {"step": step, "image_ids": [int(s.image_id) for s in batch], "loss": loss})
    raise TrainingError(f"{what} at step {step}; inputs dumped to {dump}")


def train(config: RunConfig, dataset: Dataset | None = None, progress=None) -> TrainResult:
    """Run ``config.steps`` optimizer steps; writes checkpoint.ckpt, train_log.jsonl and summary.json."""
    ds = dataset if dataset is not None else load_dataset(config.data)
    scenes = ds.train.scenes
    if not scenes:
        raise TrainingError("training split is empty")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config, ds.vocab)
    named = model.named_parameters()
    names = [k for k, _ in named]
    opt = AdamW([p for _, p in named], lr=config.lr, weight_decay=config.weight_decay)
    start = 0
    log_path = out / "train_log.jsonl"
    if config.resume:
        try:
            arrays, meta = load_checkpoint(config.resume)
            model.load_state_arrays(_params_from(arrays))
            opt.load_state_arrays(names, arrays)
        except (CheckpointError, ValueError, KeyError) as exc:
            raise TrainingError(f"cannot resume from {config.resume}: {exc}") from None
        start = int(meta.get("step", 0))
        kept = log_path.read_text().splitlines(keepends=True)[:start] if log_path.exists() else []
        log_path.write_text("".join(kept))
    else:
        log_path.write_text("")
    before = frozen_hash(model)
    feats = model.features(np.stack([s.image for s in scenes]))
    seen = ds.vocab.seen_ids()
    class_index = {c: i for i, c in enumerate(seen)}
    kind = config.distance_type
    weights = config.weights
    n = len(scenes)
    last_epoch = batch_indices(config.seed, max(config.steps - 1, 0), n, config.batch_size)[0]
    hits = total = 0
    losses = []
    with log_path.open("a") as log:
        for step in range(start, config.steps):
            epoch, idx = batch_indices(config.seed, step, n, config.batch_size)
            gts = [scenes[i].hois for i in idx]
            preds = [apply_strategy(p, config.strategy)
                     for p in model.forward(feats[:, idx], model.text_bank(seen))]
            if not all(np.all(np.isfinite(t.data)) for p in preds for t in (p.boxes_h, p.boxes_o, p.logits)):
                _abort(out, step, model, [scenes[i] for i in idx], "non-finite predictions")
            assignments = []
            for p, g in zip(preds, gts):
                assignments.append(hungarian(build_cost_matrix(p, g, weights, class_index, kind)) if g else None)
            report = batch_loss(preds, gts, assignments, weights, config.gamma_f, config.alpha_f, class_index, kind)
            if not np.isfinite(report.total.data):
                _abort(out, step, model, [scenes[i] for i in idx], "non-finite loss",
                       {k: repr(v) for k, v in report.as_dict().items()})
            opt.zero_grad()
            backward(report.total)
            opt.step()
            step_hits = step_total = 0
            for p, g, a in zip(preds, gts, assignments):
                if a is None:
                    continue
                for r, j in a.pairs:
                    if gt_distance(g[j]) <= evalkit.SMALL_MAX:
                        step_total += 1
                        step_hits += int(p.level_index[r] == 0)
            if epoch == last_epoch:
                hits += step_hits
                total += step_total
            rec = {"step": step, "epoch": epoch, **report.as_dict(), "alpha_hoi": float(model.alpha_hoi.data),
                   "alpha_b": float(model.alpha_b.data), "lowest_small": [step_hits, step_total]}
            log.write(_json_line(rec))
            losses.append(rec["total"])
            if progress is not None:
                progress(rec)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, model, opt, names, config, config.steps)
    after = frozen_hash(model)
    agreement = hits / total if total else None
    summary = {"steps": config.steps, "final_loss": losses[-1] if losses else None, "agreement": agreement,
               "agreement_counts": [hits, total], "frozen_hash_before": before, "frozen_hash_after": after}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(config.to_json(), indent=1, sort_keys=True) + "\n")
    return TrainResult(ckpt, log_path, summary["final_loss"], agreement, (hits, total), before, after, losses)


def load_trained(checkpoint, vocab: Vocabulary) -> tuple[HoiDetector, RunConfig]:
    arrays, meta = load_checkpoint(checkpoint)
    if "run" not in meta or "model" not in meta:
        raise CheckpointError(f"{checkpoint}: no run configuration stored")
    if meta.get("num_interactions") != vocab.num_interactions:
        raise CheckpointError(f"{checkpoint}: trained for {meta.get('num_interactions')} interactions, "
                              f"dataset has {vocab.num_interactions}")
    config = RunConfig(**meta["run"])
    model = build_model(config, vocab)
    try:
        model.load_state_arrays(_params_from(arrays))
    except ValueError as exc:
        raise CheckpointError(f"{checkpoint}: {exc}") from None
    return model, config


def predict(model: HoiDetector, images: np.ndarray, image_ids, gamma: float = 2.0, top_k: int = 20,
            chunk: int = 32) -> list[Detection]:
    """One candidate per query (its best class), scored s * c**gamma; top_k per image."""
    dets: list[Detection] = []
    with no_grad():
        bank = model.text_bank()
        for lo in range(0, len(images), chunk):
            feats = model.features(images[lo:lo + chunk])
            for img_id, p in zip(image_ids[lo:lo + chunk], model.forward(feats, bank)):
                prob = 1.0 / (1.0 + np.exp(-p.logits.data))
                cls = np.argmax(prob, axis=1)
                s = prob[np.arange(len(cls)), cls]
                score = s * p.confidence.data ** gamma
                order = np.argsort(-score, kind="stable")[:top_k]
                for r in order:
                    dets.append(Detection(int(img_id), tuple(map(float, p.boxes_h.data[r])),
                                          tuple(map(float, p.boxes_o.data[r])), int(cls[r]), float(score[r])))
    return dets


def infer(checkpoint, data, split: str = "test", top_k: int | None = None) -> list[Detection]:
    ds = data if isinstance(data, Dataset) else load_dataset(data)
    model, config = load_trained(checkpoint, ds.vocab)
    part = ds.test if split == "test" else ds.train
    if not part.scenes:
        return []
    images = np.stack([s.image for s in part.scenes])
    return predict(model, images, [s.image_id for s in part.scenes], config.gamma, top_k or config.top_k)


def evaluate_dataset(dets: list[Detection], ds: Dataset, split: str = "test",
                     distance_kind: str = "absolute") -> evalkit.EvalReport:
    part = ds.test if split == "test" else ds.train
    return evalkit.evaluate(dets, part.scenes, ds.vocab, ds.train_counts(), distance_kind=distance_kind)


def ablation_variants(axis: str) -> list[tuple[str, dict]]:
    if axis == "levels":
        return [("{9,12}", {"levels": (9, 12)}), ("{6,9,12}", {"levels": (6, 9, 12)}),
                ("{3,6,9,12}", {"levels": (3, 6, 9, 12)})]
    if axis == "lambda_d":
        return [(f"lambda_d={v:g}", {"lambda_d": v}) for v in (0.0, 5.0, 10.0)]
    if axis == "distance_type":
        return [("absolute/low-small", {"distance_type": "absolute", "strategy": "low-small"}),
                ("relative/low-small", {"distance_type": "relative", "strategy": "low-small"}),
                ("absolute/low-large", {"distance_type": "absolute", "strategy": "low-large"})]
    if axis == "prompts":
        return [("names", {"alpha_b": "zero"}), ("names+descriptions", {"alpha_b": "learned"})]
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")


@dataclass
class AblationResult:
    axis: str
    rows: list[dict]

    def to_json(self) -> dict:
        return {"axis": self.axis, "rows": self.rows}

    def table(self) -> str:
        header = ["Full", "Seen", "Unseen", "Rare", "Non-rare", "Small", "Large", "Agree"]
        body = [[r["mAP"]["full"], r["mAP"]["seen"], r["mAP"]["unseen"], r["mAP"]["rare"], r["mAP"]["non_rare"],
                 r["buckets"]["small"], r["buckets"]["large"], r["agreement"]] for r in self.rows]
        return evalkit.render_table(header, body, [r["variant"] for r in self.rows])


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label).strip("_")


def ablate(config: RunConfig, axis: str, dataset: Dataset | None = None, progress=None) -> AblationResult:
    variants = ablation_variants(axis)
    ds = dataset if dataset is not None else load_dataset(config.data)
    rows = []
    for label, change in variants:
        run = replace(config, out=str(Path(config.out) / axis / _slug(label)), resume=None, **change)
        result = train(run, ds)
        model, _ = load_trained(result.checkpoint, ds.vocab)
        images = np.stack([s.image for s in ds.test.scenes]) if ds.test.scenes else np.zeros((0,))
        dets = predict(model, images, [s.image_id for s in ds.test.scenes], run.gamma, run.top_k) \
            if ds.test.scenes else []
        report = evaluate_dataset(dets, ds)
        rows.append({"variant": label, **report.to_json(), "agreement": result.agreement,
                     "final_loss": result.final_loss})
        if progress is not None:
            progress(label, rows[-1])
    res = AblationResult(axis, rows)
    base = Path(config.out) / axis
    base.mkdir(parents=True, exist_ok=True)
    (base / "ablation.json").write_text(json.dumps(res.to_json(), indent=1, sort_keys=True) + "\n")
    (base / "ablation.txt").write_text(res.table() + "\n")
    return res
