"""Label handling, deterministic splits and batching."""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigInvalid, EmptyClassWarning, EmptySplit, LengthMismatch
from .signal_io import EcgMatrix, RecordMeta

log = logging.getLogger(__name__)


class ClassLabel(IntEnum):
    NORM = 0
    CD = 1
    STTC = 2
    MI = 3
    HYP = 4


N_CLASSES = len(ClassLabel)
PARAMETERS = ("HR", "PR", "QT", "QRS")
_TARGET_FIELD = {"HR": "hr", "PR": "pr", "QT": "qt", "QRS": "qrs"}
UNITS = {"HR": "bpm", "PR": "ms", "QT": "ms", "QRS": "ms"}

REAL_PARTS = ("A-train", "A-val", "A-test", "B-train", "B-val", "B-test")
SYNTHETIC_PARTS = ("train", "val", "test")


@dataclass(frozen=True)
class RegressionTargets:
    hr: Optional[float] = None
    pr: Optional[float] = None
    qt: Optional[float] = None
    qrs: Optional[float] = None

    def __post_init__(self):
        for name in ("hr", "pr", "qt", "qrs"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise ValueError(f"target {name}={v} must be finite and positive")

    def get(self, parameter: str) -> Optional[float]:
        return getattr(self, _TARGET_FIELD[parameter.upper()])


@dataclass
class LabeledRecord:
    record_id: str
    signal: Optional[object] = None  # EcgMatrix, ndarray, or None when store-backed
    label: Optional[ClassLabel] = None
    targets: Optional[RegressionTargets] = None
    label_set: frozenset = field(default_factory=frozenset)

    def signal_array(self) -> np.ndarray:
        if self.signal is None:
            raise ValueError(f"record {self.record_id} has no signal loaded")
        if isinstance(self.signal, EcgMatrix):
            return self.signal.values
        return np.asarray(self.signal, dtype=np.float32)


def record_from_meta(meta: RecordMeta, signal=None) -> LabeledRecord:
    label = ClassLabel[meta.class_label] if meta.class_label else None
    targets = RegressionTargets(meta.hr_bpm, meta.pr_ms, meta.qt_ms, meta.qrs_ms)
    return LabeledRecord(meta.record_id, signal, label, targets,
                         frozenset([label]) if label is not None else frozenset())


@dataclass(frozen=True)
class Task:
    """``Task("classification")`` or ``Task("regression", "HR")``."""

    kind: str
    parameter: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ConfigInvalid(f"unknown task kind {self.kind!r}")
        if self.kind == "regression":
            if self.parameter is None or self.parameter.upper() not in PARAMETERS:
                raise ConfigInvalid(f"regression parameter must be one of {PARAMETERS}")
            object.__setattr__(self, "parameter", self.parameter.upper())
        elif self.parameter is not None:
            raise ConfigInvalid("classification tasks take no parameter")

    @property
    def is_regression(self) -> bool:
        return self.kind == "regression"

    def __str__(self):
        return self.kind if self.parameter is None else f"{self.kind}:{self.parameter}"

    @classmethod
    def parse(cls, text: str) -> "Task":
        kind, _, param = text.partition(":")
        return cls(kind, param or None)


# ---------------------------------------------------------------------------
# filtering and splitting
# ---------------------------------------------------------------------------


def filter_single_label(records: Sequence[LabeledRecord]) -> list:
    """Keep records whose ``label_set`` has exactly one element."""
    kept = []
    for r in records:
        if len(r.label_set) == 1:
            (only,) = r.label_set
            kept.append(LabeledRecord(r.record_id, r.signal, ClassLabel(only), r.targets,
                                      r.label_set))
    return kept


def _by_class(records: Sequence[LabeledRecord]) -> dict:
    groups = {c: [] for c in ClassLabel}
    for r in records:
        if r.label is None:
            raise ValueError(f"record {r.record_id} has no class label")
        groups[ClassLabel(r.label)].append(r)
    return groups


def stratified_halves(records: Sequence[LabeledRecord], seed: int):
    """Split each class in half after a seeded shuffle.

    An odd class puts the extra record in the first half. Output order follows
    the class ordinal, then shuffled order within the class.
    """
    rng = np.random.default_rng(seed)
    half_a, half_b = [], []
    for cls, group in _by_class(records).items():
        if len(group) < 2:
            warnings.warn(f"class {cls.name} has {len(group)} record(s)", EmptyClassWarning,
                          stacklevel=2)
        order = rng.permutation(len(group))
        cut = (len(group) + 1) // 2
        half_a.extend(group[i] for i in order[:cut])
        half_b.extend(group[i] for i in order[cut:])
    return half_a, half_b


def split_counts(n: int) -> tuple:
    """70/10/20 sizes for ``n`` items: floor each share, then hand the
    leftovers to train, then val, then test."""
    counts = [7 * n // 10, n // 10, 2 * n // 10]
    leftover = n - sum(counts)
    for i in range(leftover):
        counts[i % 3] += 1
    return tuple(counts)


def split_tvt(records: Sequence[LabeledRecord], seed: int, stratify: Optional[bool] = None):
    """Seeded 70/10/20 partition, per class when every record is labeled."""
    if stratify is None:
        stratify = bool(records) and all(r.label is not None for r in records)
    rng = np.random.default_rng(seed)
    groups = _by_class(records).values() if stratify else [list(records)]
    train, val, test = [], [], []
    for group in groups:
        order = rng.permutation(len(group))
        n_tr, n_va, _ = split_counts(len(group))
        train.extend(group[i] for i in order[:n_tr])
        val.extend(group[i] for i in order[n_tr:n_tr + n_va])
        test.extend(group[i] for i in order[n_tr + n_va:])
    return train, val, test


def one_hot(label, n_classes: int = N_CLASSES) -> np.ndarray:
    vec = np.zeros(n_classes, dtype=np.float32)
    vec[int(label)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# split assignments / manifests
# ---------------------------------------------------------------------------


@dataclass
class SplitAssignment:
    assignment: dict  # record_id -> part name, insertion ordered
    seed: int

    def ids(self, part: str) -> list:
        return [rid for rid, p in self.assignment.items() if p == part]

    def parts(self) -> list:
        return sorted(set(self.assignment.values()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_id", "assignment", "seed"])
        for rid, part in self.assignment.items():
            w.writerow([rid, part, self.seed])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()[:16]

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path) -> "SplitAssignment":
        rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
        if not rows:
            raise EmptySplit(f"manifest {path} is empty")
        seeds = {int(r["seed"]) for r in rows}
        if len(seeds) != 1:
            raise ValueError(f"manifest {path} mixes seeds {sorted(seeds)}")
        return cls({r["record_id"]: r["assignment"] for r in rows}, seeds.pop())


def assign_real(records: Sequence[LabeledRecord], seed: int) -> SplitAssignment:
    """Halve into Sets A and B, then 70/10/20 within each set."""
    half_a, half_b = stratified_halves(records, seed)
    assignment = {}
    for name, half, sub_seed in (("A", half_a, seed + 1), ("B", half_b, seed + 2)):
        for part, recs in zip(("train", "val", "test"), split_tvt(half, sub_seed)):
            for r in recs:
                assignment[r.record_id] = f"{name}-{part}"
    return SplitAssignment(assignment, seed)


def assign_synthetic(records: Sequence[LabeledRecord], seed: int) -> SplitAssignment:
    assignment = {}
    for part, recs in zip(SYNTHETIC_PARTS, split_tvt(records, seed, stratify=False)):
        for r in recs:
            assignment[r.record_id] = part
    return SplitAssignment(assignment, seed)


def split_stats(split: SplitAssignment, records: Sequence[LabeledRecord]) -> list:
    """Per-partition, per-class counts as ``(partition, class, count)`` rows."""
    labels = {r.record_id: r.label for r in records}
    rows = []
    for part in split.parts():
        ids = split.ids(part)
        for cls in ClassLabel:
            rows.append((part, cls.name, sum(1 for i in ids if labels.get(i) == cls)))
        unlabeled = sum(1 for i in ids if labels.get(i) is None)
        if unlabeled:
            rows.append((part, "", unlabeled))
    return rows


def write_split_stats(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["partition", "class", "count"])
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    signals: np.ndarray  # [b, leads, samples] float32
    targets: np.ndarray  # one-hot [b, C] or regression [b]

    def __len__(self):
        return len(self.signals)


def regression_subset(records: Sequence[LabeledRecord], parameter: str):
    """Records carrying ``parameter``, plus how many were dropped."""
    kept = [r for r in records if r.targets is not None and r.targets.get(parameter) is not None]
    return kept, len(records) - len(kept)


def to_arrays(records: Sequence[LabeledRecord], task: Task,
              loader: Optional[Callable[[Sequence[str]], np.ndarray]] = None):
    """Stack signals and targets for ``task``.

    Classification targets are integer class ordinals; regression targets are
    float64 values. Regression records without the target are excluded and the
    count is logged. ``loader`` fetches signals by id for store-backed records.
    """
    if task.is_regression:
        records, dropped = regression_subset(records, task.parameter)
        if dropped:
            log.info("%s: excluded %d record(s) lacking %s", task, dropped, task.parameter)
        y = np.array([r.targets.get(task.parameter) for r in records], dtype=np.float64)
    else:
        if any(r.label is None for r in records):
            raise ValueError("classification needs a class label on every record")
        y = np.array([int(r.label) for r in records], dtype=np.int64)
    if not records:
        raise EmptySplit(f"no records available for {task}")
    if loader is not None and any(r.signal is None for r in records):
        X = loader([r.record_id for r in records])
    else:
        X = np.stack([r.signal_array() for r in records]).astype(np.float32, copy=False)
    return X, y


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def iter_batches(X: np.ndarray, y: np.ndarray, batch_size: int = 32, seed: int = 0,
                 epoch: int = 0, shuffle: bool = True, n_classes: Optional[int] = None
                 ) -> Iterator[Batch]:
    """Yield every row once; order depends only on ``(seed, epoch)``.

    With ``n_classes`` set, integer labels are emitted one-hot.
    """
    if len(X) == 0:
        raise EmptySplit("cannot batch an empty split")
    if len(X) != len(y):
        raise LengthMismatch(f"{len(X)} signals vs {len(y)} targets")
    if batch_size < 1:
        raise ConfigInvalid("batch_size must be positive")
    order = epoch_order(len(X), seed, epoch, shuffle)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        targets = y[idx]
        if n_classes is not None:
            targets = np.eye(n_classes, dtype=np.float32)[targets]
        yield Batch(X[idx], targets)


def batches(split: Sequence[LabeledRecord], task: Task, batch_size: int = 32,
            shuffle_seed: int = 0, epoch: int = 0) -> Iterator[Batch]:
    X, y = to_arrays(split, task)
    return iter_batches(X, y, batch_size, shuffle_seed, epoch,
                        n_classes=None if task.is_regression else N_CLASSES)
