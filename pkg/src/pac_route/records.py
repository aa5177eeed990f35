"""Core record types and loss functions.

A record describes one input that was answered by both the expensive
"thinking" model and the cheap "non-thinking" model.  The loss of the cheap
route is measured relative to the thinking route and can either be supplied
precomputed, derived from answer strings (binary), or derived from answer
embeddings (cosine distance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

LOSS_KINDS = ("precomputed", "binary", "cosine")


@dataclass(frozen=True)
class Record:
    """One routed input with its uncertainty score and optional loss sources."""

    id: str
    uncertainty: float
    group_label: str | None = None
    loss: float | None = None
    thinking_answer: str | None = None
    cheap_answer: str | None = None
    gold_answer: str | None = None
    thinking_embedding: tuple[float, ...] | None = None
    cheap_embedding: tuple[float, ...] | None = None
    tokens_thinking: int | None = None
    tokens_cheap: int | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("record id must be a non-empty string")
        u = float(self.uncertainty)
        if not math.isfinite(u) or not 0.0 <= u <= 1.0:
            raise ValueError(f"record {self.id}: uncertainty {u} outside [0, 1]")
        object.__setattr__(self, "uncertainty", u)
        for name in ("thinking_embedding", "cheap_embedding"):
            vec = getattr(self, name)
            if vec is not None:
                object.__setattr__(self, name, tuple(float(x) for x in vec))
        for name in ("tokens_thinking", "tokens_cheap"):
            tok = getattr(self, name)
            if tok is not None and tok < 0:
                raise ValueError(f"record {self.id}: {name} must be non-negative")


@dataclass(frozen=True)
class ResolvedRecord(Record):
    """A record whose relative loss is known; produced by :func:`resolve_loss`."""

    loss: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.loss is None or not math.isfinite(float(self.loss)):
            raise ValueError(f"record {self.id}: resolved loss must be finite")
        object.__setattr__(self, "loss", float(self.loss))


@dataclass(frozen=True)
class LossSpec:
    """How to obtain each record's loss and the a-priori bound B on it."""

    kind: str = "precomputed"
    bound_B: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.bound_B > 0:
            raise ValueError("loss bound B must be positive")
        if self.kind == "binary" and self.bound_B != 1.0:
            raise ValueError("binary loss is {0, 1}; bound B must be 1")


def default_loss_spec(kind: str) -> LossSpec:
    """LossSpec with the conventional bound for `kind` (cosine spans [0, 2])."""
    return LossSpec(kind=kind, bound_B=2.0 if kind == "cosine" else 1.0)


def binary_loss(thinking_answer: str, cheap_answer: str, gold_answer: str) -> float:
    """1 iff the cheap answer misses gold while the thinking answer hits it.

    Answers are compared by exact string equality after trimming surrounding
    whitespace; agreement of the cheap answer with gold, or failure of the
    thinking answer, both give loss 0.
    """
    answers = (thinking_answer, cheap_answer, gold_answer)
    trimmed = tuple(a.strip() if isinstance(a, str) else None for a in answers)
    if any(not t for t in trimmed):
        raise ValueError("binary loss needs non-empty thinking/cheap/gold answers")
    think, cheap, gold = trimmed
    return float(cheap != gold and think == gold)


def cosine_loss(v1, v2) -> float:
    """Cosine distance 1 - <v1, v2> / (|v1| |v2|), in [0, 2]."""
    a = [float(x) for x in v1]
    b = [float(x) for x in v2]
    if len(a) != len(b) or not a:
        raise ValueError("cosine loss needs two non-empty vectors of equal length")
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine loss undefined for zero-norm vectors")
    dot = sum(x * y for x, y in zip(a, b))
    return 1.0 - dot / (na * nb)


def resolve_loss(record: Record, spec: LossSpec) -> ResolvedRecord:
    """Attach a concrete loss to `record` according to `spec`.

    precomputed: the record's own loss field, validated against [0, B].
    binary:      from the three answer strings.
    cosine:      from the two answer embeddings.
    """
    if spec.kind == "precomputed":
        if record.loss is None:
            raise ValueError(f"record {record.id}: no precomputed loss present")
        value = float(record.loss)
    elif spec.kind == "binary":
        if record.thinking_answer is None or record.cheap_answer is None or record.gold_answer is None:
            raise ValueError(f"record {record.id}: binary loss needs all three answers")
        value = binary_loss(record.thinking_answer, record.cheap_answer, record.gold_answer)
    else:
        if record.thinking_embedding is None or record.cheap_embedding is None:
            raise ValueError(f"record {record.id}: cosine loss needs both embeddings")
        value = cosine_loss(record.thinking_embedding, record.cheap_embedding)
    if not 0.0 <= value <= spec.bound_B:
        raise ValueError(
            f"record {record.id}: loss {value} outside [0, {spec.bound_B}]"
        )
    data = {f.name: getattr(record, f.name) for f in fields(Record)}
    data["loss"] = value
    return ResolvedRecord(**data)


def with_loss(record: Record, loss: float) -> ResolvedRecord:
    """ResolvedRecord copy of `record` carrying `loss` (no bound check)."""
    data = {f.name: getattr(record, f.name) for f in fields(Record)}
    data["loss"] = loss
    return ResolvedRecord(**data)


__all__ = [
    "LOSS_KINDS",
    "Record",
    "ResolvedRecord",
    "LossSpec",
    "default_loss_spec",
    "binary_loss",
    "cosine_loss",
    "resolve_loss",
    "with_loss",
]
