"""Interaction vocabulary, body-part description bank and the fused text classifier."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from .numcore import tensor as T
from .numcore.tensor import Tensor

DATA_DIR = Path(__file__).parent / "data"
BODY_PARTS = ("mouth", "eye", "arm", "hand", "leg", "foot")


class SemanticsError(ValueError):
    pass


class ProviderError(RuntimeError):
    """A description provider failed to produce an entry."""


class NotFound(ProviderError, KeyError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    actions: tuple[str, ...]
    objects: tuple[str, ...]
    interactions: tuple[tuple[int, int], ...]
    seen: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "interactions", tuple((int(a), int(o)) for a, o in self.interactions))
        seen = tuple(bool(s) for s in self.seen) if self.seen is not None else (True,) * len(self.interactions)
        object.__setattr__(self, "seen", seen)
        if len(self.seen) != len(self.interactions):
            raise SemanticsError(f"{len(self.seen)} seen flags for {len(self.interactions)} interactions")
        if len(set(self.interactions)) != len(self.interactions):
            raise SemanticsError("duplicate interaction pairs")
        for i, (a, o) in enumerate(self.interactions):
            if not (0 <= a < len(self.actions) and 0 <= o < len(self.objects)):
                raise SemanticsError(f"interaction {i} references ({a}, {o}) outside the vocabulary")
        object.__setattr__(self, "_index", {pair: i for i, pair in enumerate(self.interactions)})

    @property
    def num_interactions(self) -> int:
        return len(self.interactions)

    def interaction_id(self, action: int, obj: int) -> int:
        try:
            return self._index[(action, obj)]  # type: ignore[attr-defined]
        except KeyError:
            raise SemanticsError(f"no interaction for action {action}, object {obj}") from None

    def name(self, i: int) -> tuple[str, str]:
        a, o = self.interactions[i]
        return self.actions[a], self.objects[o]

    def seen_ids(self) -> list[int]:
        return [i for i, s in enumerate(self.seen) if s]

    def unseen_ids(self) -> list[int]:
        return [i for i, s in enumerate(self.seen) if not s]

    def with_seen(self, seen) -> "Vocabulary":
        return replace(self, seen=tuple(bool(s) for s in seen))

    def to_json(self) -> dict:
        return {"actions": list(self.actions), "objects": list(self.objects),
                "interactions": [list(p) for p in self.interactions], "seen": list(self.seen)}

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        missing = {"actions", "objects", "interactions"} - set(doc)
        if missing:
            raise SemanticsError(f"vocabulary is missing keys {sorted(missing)}")
        return cls(doc["actions"], doc["objects"], doc["interactions"], doc.get("seen"))


def load_vocabulary(path=None) -> Vocabulary:
    path = Path(path) if path else DATA_DIR / "vocab.json"
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SemanticsError(f"{path}: {exc}") from None
    return Vocabulary.from_json(doc)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=1) + "\n")


@dataclass(frozen=True)
class Description:
    body_parts: tuple[str, ...]
    text: str


@dataclass(frozen=True)
class DescriptionBank:
    """One body-part description per interaction id, in id order."""

    entries: tuple[Description, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]


def _check_entry(body_parts, text, where: str) -> Description:
    if not isinstance(body_parts, list) or not body_parts:
        raise SemanticsError(f"{where}: body_parts must be a nonempty list")
    for part in body_parts:
        if part not in BODY_PARTS:
            raise SemanticsError(f"{where}: body part {part!r} is not one of {', '.join(BODY_PARTS)}")
    if not isinstance(text, str) or not text.strip():
        raise SemanticsError(f"{where}: empty description")
    return Description(tuple(body_parts), text)


def parse_description_bank(records: list, vocab: Vocabulary) -> DescriptionBank:
    if not isinstance(records, list):
        raise SemanticsError("description bank must be a JSON list")
    a_idx = {a: i for i, a in enumerate(vocab.actions)}
    o_idx = {o: i for i, o in enumerate(vocab.objects)}
    found: dict[int, Description] = {}
    for n, rec in enumerate(records):
        where = f"record {n}"
        try:
            pair = (a_idx[rec["action"]], o_idx[rec["object"]])
        except (KeyError, TypeError):
            raise SemanticsError(f"{where}: unknown or missing action/object") from None
        if pair not in vocab._index:  # type: ignore[attr-defined]
            raise SemanticsError(f"{where}: ({rec['action']}, {rec['object']}) is not an interaction")
        iid = vocab._index[pair]  # type: ignore[attr-defined]
        if iid in found:
            raise SemanticsError(f"{where}: duplicate entry for interaction {iid}")
        found[iid] = _check_entry(rec.get("body_parts"), rec.get("description"), where)
    missing = [i for i in range(vocab.num_interactions) if i not in found]
    if missing:
        raise SemanticsError(f"description bank has no entry for interaction id(s) {missing}")
    return DescriptionBank(tuple(found[i] for i in range(vocab.num_interactions)))


def load_description_bank(path=None, vocab: Vocabulary | None = None) -> DescriptionBank:
    path = Path(path) if path else DATA_DIR / "descriptions.json"
    vocab = vocab or load_vocabulary()
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SemanticsError(f"{path}: {exc}") from None
    return parse_description_bank(records, vocab)


def save_description_bank(bank: DescriptionBank, vocab: Vocabulary, path) -> None:
    records = []
    for i, e in enumerate(bank.entries):
        action, obj = vocab.name(i)
        records.append({"action": action, "object": obj, "body_parts": list(e.body_parts), "description": e.text})
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


class DescriptionProvider(Protocol):
    def __call__(self, action: str, obj: str) -> tuple[tuple[str, ...], str]: ...


class BankDescriptionProvider:
    """Provider backed by a loaded bank; returns entries verbatim."""

    def __init__(self, bank: DescriptionBank, vocab: Vocabulary):
        self.bank = bank
        self.vocab = vocab

    def __call__(self, action: str, obj: str) -> tuple[tuple[str, ...], str]:
        try:
            iid = self.vocab.interaction_id(self.vocab.actions.index(action), self.vocab.objects.index(obj))
        except (ValueError, SemanticsError):
            raise NotFound(f"no description for ({action}, {obj})") from None
        e = self.bank.entries[iid]
        return e.body_parts, e.text


def bank_from_provider(provider: DescriptionProvider, vocab: Vocabulary) -> DescriptionBank:
    entries = []
    for i in range(vocab.num_interactions):
        action, obj = vocab.name(i)
        try:
            parts, text = provider(action, obj)
        except ProviderError:
            raise
        except Exception as exc:  # surface anything else as a typed failure
            raise ProviderError(f"provider failed on ({action}, {obj}): {exc}") from exc
        try:
            entries.append(_check_entry(list(parts), text, f"interaction {i}"))
        except SemanticsError as exc:
            raise ProviderError(str(exc)) from None
    return DescriptionBank(tuple(entries))


@dataclass
class TextBank:
    t_hoi: Tensor
    t_b: np.ndarray
    alpha_hoi: Tensor = field(default_factory=lambda: Tensor(np.array(1.0), requires_grad=True))
    alpha_b: Tensor = field(default_factory=lambda: Tensor(np.array(0.5), requires_grad=True))

    def __post_init__(self):
        if self.t_hoi.shape[0] != self.t_b.shape[0]:
            raise SemanticsError(f"T_hoi has {self.t_hoi.shape[0]} rows but T_b has {self.t_b.shape[0]}")

    def rows(self, ids) -> "TextBank":
        ids = np.asarray(ids, dtype=np.int64)
        return TextBank(T.take(self.t_hoi, ids, axis=0), self.t_b[ids], self.alpha_hoi, self.alpha_b)


def fuse_logits(h: Tensor, bank: TextBank) -> Tensor:
    """Scores alpha_hoi * h T_hoi^T + alpha_b * h T_b^T for hidden states h (..., C_t)."""
    if h.shape[-1] != bank.t_hoi.shape[-1] or h.shape[-1] != bank.t_b.shape[-1]:
        raise SemanticsError(f"hidden width {h.shape[-1]} does not match text width {bank.t_hoi.shape[-1]}")
    if h.ndim == 1:
        return fuse_logits(h.reshape(1, -1), bank).reshape(-1)
    name = T.matmul(h, bank.t_hoi.transpose(1, 0))
    desc = T.matmul(h, Tensor(bank.t_b.T))
    return name * bank.alpha_hoi + desc * bank.alpha_b
