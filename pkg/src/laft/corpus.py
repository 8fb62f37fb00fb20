"""Dataset model and CSV ingestion for noisy-label text classification.

A dataset is an ordered collection of text samples, each carrying an
assigned (possibly corrupted) label and, optionally, a held-out true label
that is only ever used for diagnostics. The canonical on-disk format is a
UTF-8 CSV with header ``id,text,label`` or ``id,text,label,true_label``,
where label cells hold class names.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "DatasetError",
    "Sample",
    "ClassSet",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "split_dataset",
]


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""


@dataclass(frozen=True)
class Sample:
    """One text instance with its assigned label.

    ``true_label`` is evaluation-only ground truth; training code must never
    read it.
    """

    id: str
    text: str
    assigned_label: int
    true_label: int | None = None


@dataclass(frozen=True)
class ClassSet:
    """Ordered, immutable set of class names; index order is significant."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise DatasetError(f"need at least 2 classes, got {len(self.names)}")
        if len(set(self.names)) != len(self.names):
            raise DatasetError("class names must be unique")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DatasetError(f"unknown class {name!r}") from None

    def name(self, index: int) -> str:
        if not 0 <= index < len(self.names):
            raise DatasetError(f"class index {index} out of range")
        return self.names[index]


class Dataset:
    """Immutable ordered list of samples over a shared class set."""

    def __init__(self, samples: Iterable[Sample], classes: ClassSet, split_tag: str = "train"):
        if split_tag not in ("train", "validation", "test"):
            raise DatasetError(f"invalid split tag {split_tag!r}")
        samples = tuple(samples)
        seen: set[str] = set()
        has_true = None
        for s in samples:
            if s.id in seen:
                raise DatasetError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if not 0 <= s.assigned_label < len(classes):
                raise DatasetError(f"label {s.assigned_label} out of range for sample {s.id!r}")
            present = s.true_label is not None
            if has_true is None:
                has_true = present
            elif has_true != present:
                raise DatasetError("true_label must be present for all samples or none")
            if present and not 0 <= s.true_label < len(classes):
                raise DatasetError(f"true label {s.true_label} out of range for sample {s.id!r}")
        self.samples = samples
        self.classes = classes
        self.split_tag = split_tag

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    @property
    def has_true_labels(self) -> bool:
        return len(self.samples) > 0 and self.samples[0].true_label is not None

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def texts(self) -> list[str]:
        return [s.text for s in self.samples]

    def assigned_labels(self) -> np.ndarray:
        return np.array([s.assigned_label for s in self.samples], dtype=np.int64)

    def true_labels(self) -> np.ndarray:
        if not self.has_true_labels:
            raise DatasetError("dataset has no true labels")
        return np.array([s.true_label for s in self.samples], dtype=np.int64)

    def with_samples(self, samples: Iterable[Sample], split_tag: str | None = None) -> "Dataset":
        return Dataset(samples, self.classes, split_tag or self.split_tag)


_HEADERS = (["id", "text", "label"], ["id", "text", "label", "true_label"])


def load_dataset(path: str | Path, classes: ClassSet | str = "infer", split_tag: str = "train") -> Dataset:
    """Load a dataset from CSV.

    With ``classes="infer"`` the class set is built from the label columns in
    order of first appearance; otherwise every label must name a class in the
    given :class:`ClassSet`. Row numbers in error messages count the header
    as row 1.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, missing header") from None
        if header not in _HEADERS:
            raise DatasetError(
                f"{path}: missing or invalid header {header!r}; expected id,text,label[,true_label]"
            )
        has_true = len(header) == 4
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}: wrong field count at row {lineno}")
            rows.append((lineno, row))

    if isinstance(classes, str):
        if classes != "infer":
            raise DatasetError(f"classes must be a ClassSet or 'infer', got {classes!r}")
        ordered: list[str] = []
        for _, row in rows:
            for cell in ([row[2], row[3]] if has_true else [row[2]]):
                if cell not in ordered:
                    ordered.append(cell)
        if len(ordered) < 2:
            raise DatasetError(f"{path}: fewer than 2 distinct classes")
        classes = ClassSet(tuple(ordered))

    samples = []
    seen: set[str] = set()
    for lineno, row in rows:
        sid, text, label = row[0], row[1], row[2]
        if sid in seen:
            raise DatasetError(f"{path}: duplicate id {sid!r} at row {lineno}")
        seen.add(sid)
        try:
            assigned = classes.index(label)
        except DatasetError:
            raise DatasetError(f"{path}: unknown class {label!r} at row {lineno}") from None
        true = None
        if has_true:
            try:
                true = classes.index(row[3])
            except DatasetError:
                raise DatasetError(f"{path}: unknown class {row[3]!r} at row {lineno}") from None
        samples.append(Sample(id=sid, text=text, assigned_label=assigned, true_label=true))
    return Dataset(samples, classes, split_tag)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV; inverse of :func:`load_dataset`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if dataset.has_true_labels:
            writer.writerow(["id", "text", "label", "true_label"])
            for s in dataset:
                writer.writerow(
                    [s.id, s.text, dataset.classes.name(s.assigned_label), dataset.classes.name(s.true_label)]
                )
        else:
            writer.writerow(["id", "text", "label"])
            for s in dataset:
                writer.writerow([s.id, s.text, dataset.classes.name(s.assigned_label)])


def split_dataset(dataset: Dataset, fractions: tuple[float, float], seed: int) -> tuple[Dataset, Dataset]:
    """Split into disjoint (train, validation) datasets of floor(frac*n) samples.

    The split is a seeded permutation, so equal inputs always produce equal
    splits. Both outputs share the input's class set.
    """
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0:
        raise DatasetError("split fractions must be positive")
    if f_train + f_val > 1 + 1e-9:
        raise DatasetError("split fractions must sum to at most 1")
    n = len(dataset)
    n_train = int(np.floor(f_train * n))
    n_val = int(np.floor(f_val * n))
    if n_train == 0 or n_val == 0:
        raise DatasetError(f"split of {n} samples with fractions {fractions} yields an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    val_idx = sorted(perm[n_train : n_train + n_val].tolist())
    train = Dataset((dataset[i] for i in train_idx), dataset.classes, "train")
    val = Dataset((dataset[i] for i in val_idx), dataset.classes, "validation")
    return train, val
