"""Interaction logs, padded sequences, learner-level splits and synthetic data."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError

HEADER = ("learner_id", "exercise_id", "concept_id", "response", "order")


@dataclass(frozen=True)
class InteractionRecord:
    learner_id: str
    exercise_id: str
    concept_id: str
    response: int
    order: int


def parse_csv(path) -> list[InteractionRecord]:
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return records
        if tuple(h.strip() for h in header) != HEADER:
            raise DataFormatError(f"{path}:1: expected header {','.join(HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected {len(HEADER)} columns, got {len(row)}")
            learner, exercise, concept, response, order = (c.strip() for c in row)
            if response not in ("0", "1"):
                raise DataFormatError(f"{path}:{lineno}: response must be 0 or 1, got {response!r}")
            try:
                order_key = int(order)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: order must be an integer, got {order!r}") from None
            records.append(InteractionRecord(learner, exercise, concept, int(response), order_key))
    return records


def write_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow((r.learner_id, r.exercise_id, r.concept_id, r.response, r.order))


class Vocabulary:
    """Dense ids in order of first appearance; index 0 is reserved for padding."""

    def __init__(self, ids=()):
        self.index: dict[str, int] = {}
        for i in ids:
            self.add(i)

    def add(self, key: str) -> int:
        if key not in self.index:
            self.index[key] = len(self.index) + 1
        return self.index[key]

    def __len__(self):
        return len(self.index)

    @property
    def size(self) -> int:
        """Table rows needed, padding row included."""
        return len(self.index) + 1

    def ids(self) -> list[str]:
        return list(self.index)


@dataclass
class Sequence:
    learner_id: str
    chunk: int
    exercises: np.ndarray
    concepts: np.ndarray
    responses: np.ndarray

    def __len__(self):
        return len(self.responses)


@dataclass
class Corpus:
    sequences: list[Sequence]
    exercises: Vocabulary
    concepts: Vocabulary
    exercise_concept: dict[int, int]
    skipped: list[dict] = field(default_factory=list)

    def learners(self) -> list[str]:
        seen = dict.fromkeys(s.learner_id for s in self.sequences)
        return list(seen)

    def skipped_report(self) -> str:
        return json.dumps({"skipped_chunks": len(self.skipped), "entries": self.skipped}, indent=2)


def build_sequences(records, max_len: int) -> Corpus:
    """Group by learner, order by key, and cut into chunks of at most ``max_len``.

    Every chunk is kept except those with fewer than two interactions, which
    have no prediction target and are listed in ``Corpus.skipped``.
    """
    if max_len < 2:
        raise ContractError(f"max_len must be >= 2, got {max_len}")
    exercises, concepts = Vocabulary(), Vocabulary()
    ex_concept: dict[int, int] = {}
    by_learner: dict[str, list[tuple[int, int, InteractionRecord]]] = {}
    for pos, r in enumerate(records):
        by_learner.setdefault(r.learner_id, []).append((r.order, pos, r))
        e = exercises.add(r.exercise_id)
        c = concepts.add(r.concept_id)
        ex_concept.setdefault(e, c)

    sequences, skipped = [], []
    for learner, rows in by_learner.items():
        rows.sort(key=lambda t: (t[0], t[1]))
        ordered = [t[2] for t in rows]
        for chunk, start in enumerate(range(0, len(ordered), max_len)):
            part = ordered[start : start + max_len]
            if len(part) < 2:
                skipped.append({"learner_id": learner, "chunk": chunk, "length": len(part)})
                continue
            sequences.append(
                Sequence(
                    learner,
                    chunk,
                    np.array([exercises.index[r.exercise_id] for r in part], dtype=np.int64),
                    np.array([concepts.index[r.concept_id] for r in part], dtype=np.int64),
                    np.array([r.response for r in part], dtype=np.int64),
                )
            )
    return Corpus(sequences, exercises, concepts, ex_concept, skipped)


def split(sequences, fraction: float = 0.8, seed: int = 0):
    """Learner-level train/test split; all chunks of a learner stay together."""
    learners = list(dict.fromkeys(s.learner_id for s in sequences))
    if len(learners) < 2:
        raise ContractError(f"need at least 2 learners to split, got {len(learners)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(learners))
    n_train = min(max(int(round(fraction * len(learners))), 1), len(learners) - 1)
    train_ids = {learners[i] for i in order[:n_train]}
    train = [s for s in sequences if s.learner_id in train_ids]
    test = [s for s in sequences if s.learner_id not in train_ids]
    return train, test


def split_hash(train, test) -> str:
    h = hashlib.sha256()
    for tag, part in (("train", train), ("test", test)):
        h.update(tag.encode())
        for s in part:
            h.update(f"{s.learner_id}/{s.chunk};".encode())
    return h.hexdigest()[:16]


@dataclass
class SequenceBatch:
    """Zero-padded ``[B, L]`` index arrays plus valid lengths."""

    exercises: np.ndarray
    concepts: np.ndarray
    responses: np.ndarray
    lengths: np.ndarray
    learners: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.responses.shape[0]

    @property
    def max_len(self) -> int:
        return self.responses.shape[1]

    def valid(self) -> np.ndarray:
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]

    def check(self) -> None:
        arrays = (self.exercises, self.concepts, self.responses)
        if any(a.ndim != 2 for a in arrays) or len({a.shape for a in arrays}) != 1:
            raise ContractError(
                f"batch arrays must share one [B, L] shape, got {[a.shape for a in arrays]}"
            )
        if self.lengths.shape != (self.size,) or (self.lengths > self.max_len).any() or (self.lengths < 1).any():
            raise ContractError(f"valid lengths {self.lengths} inconsistent with shape {self.responses.shape}")


def pad_batch(sequences, max_len: int) -> SequenceBatch:
    B = len(sequences)
    ex = np.zeros((B, max_len), dtype=np.int64)
    co = np.zeros((B, max_len), dtype=np.int64)
    re = np.zeros((B, max_len), dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    for i, s in enumerate(sequences):
        n = len(s)
        if n > max_len:
            raise ContractError(f"sequence of length {n} exceeds max_len {max_len}")
        ex[i, :n], co[i, :n], re[i, :n] = s.exercises, s.concepts, s.responses
        lengths[i] = n
    return SequenceBatch(ex, co, re, lengths, [(s.learner_id, s.chunk) for s in sequences])


def iter_batches(sequences, batch_size: int, max_len: int, order=None):
    idx = np.arange(len(sequences)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield pad_batch([sequences[i] for i in idx[start : start + batch_size]], max_len)


# -- synthetic data ------------------------------------------------------------


@dataclass
class SynthSpec:
    learners: int = 500
    concepts: int = 25
    exercises: int = 200
    length: int = 50
    ability_mean: float = 0.0
    ability_spread: float = 1.0
    concept_spread: float = 1.0
    difficulty_spread: float = 0.7
    discrimination_mean: float = 1.0
    discrimination_spread: float = 0.3
    drift: float = 0.02
    guess: float = 0.1
    slip: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        for name in ("learners", "concepts", "exercises", "length"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("guess", "slip"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must be a probability, got {getattr(self, name)}")
        if self.guess + self.slip > 1.0:
            raise ContractError("guess + slip must not exceed 1")
        for name in ("ability_spread", "concept_spread", "difficulty_spread", "discrimination_spread"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def synth_generate(spec: SynthSpec) -> list[InteractionRecord]:
    """Three-parameter-logistic learners answering uniformly drawn exercises.

    Exercise difficulty is its concept's base difficulty plus exercise-level
    noise; discrimination is drawn per exercise and floored at zero.  Each
    correct answer raises the learner's ability by ``drift``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    ex_concept = rng.integers(spec.concepts, size=spec.exercises)
    concept_base = rng.normal(0.0, spec.concept_spread, size=spec.concepts)
    difficulty = concept_base[ex_concept] + rng.normal(0.0, spec.difficulty_spread, size=spec.exercises)
    discrimination = np.maximum(
        rng.normal(spec.discrimination_mean, spec.discrimination_spread, size=spec.exercises), 0.0
    )
    records = []
    for learner in range(spec.learners):
        theta = rng.normal(spec.ability_mean, spec.ability_spread)
        for t in range(spec.length):
            e = int(rng.integers(spec.exercises))
            p_know = _sigmoid(discrimination[e] * (theta - difficulty[e]))
            p = spec.guess + (1.0 - spec.guess - spec.slip) * p_know
            r = int(rng.random() < p)
            if r:
                theta += spec.drift
            records.append(InteractionRecord(f"u{learner}", f"e{e}", f"c{ex_concept[e]}", r, t))
    return records
