"""Synthetic label-noise injectors.

Three corruption models over a clean dataset:

* uniform: flipped labels are drawn uniformly from the other classes;
* class-conditional: flipped labels follow a fixed class-to-class map;
* feature-dependent: per-sample flip rates come from a truncated normal and
  the destination class from a random projection of the text features.

Every injector flips exactly ``round(ratio * n)`` samples, records the flips,
and stores the original labels as ``true_label`` on the output dataset so
diagnostics can recover the ground truth.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .corpus import Dataset, DatasetError, Sample
from .features import HashedFeaturizer

__all__ = [
    "NoiseError",
    "NoiseSpec",
    "FlipRecord",
    "inject_symmetric",
    "inject_asymmetric",
    "inject_instance_dependent",
    "inject",
    "save_flip_records",
    "load_flip_records",
]

NOISE_KINDS = ("SN", "AN", "IDN")

# Spread of the per-sample flip-rate distribution for feature-dependent noise.
IDN_RATE_STD = 0.1


class NoiseError(ValueError):
    """Invalid noise configuration or unusable input dataset."""


@dataclass(frozen=True)
class NoiseSpec:
    """Configuration of one injection run."""

    kind: str
    ratio: float
    seed: int = 0
    transition_map: dict[int, int] | None = None
    feature_projection_seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise NoiseError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.ratio <= 1.0:
            raise NoiseError(f"noise ratio must be in [0, 1], got {self.ratio}")
        if self.transition_map is not None:
            for src, dst in self.transition_map.items():
                if src == dst:
                    raise NoiseError(f"transition map has a fixed point at class {src}")


@dataclass(frozen=True)
class FlipRecord:
    sample_id: str
    original_label: int
    flipped_label: int

    def __post_init__(self):
        if self.original_label == self.flipped_label:
            raise NoiseError(f"flip record for {self.sample_id!r} does not change the label")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _check_clean(dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise NoiseError("cannot inject noise into an empty dataset")
    if len(dataset.classes) < 2:
        raise NoiseError("need at least 2 classes to inject label noise")
    if dataset.has_true_labels:
        for s in dataset:
            if s.true_label != s.assigned_label:
                raise NoiseError(f"input dataset is not clean: sample {s.id!r} already has a flipped label")


def _apply_flips(dataset: Dataset, flipped: dict[int, int]) -> tuple[Dataset, list[FlipRecord]]:
    """Build the corrupted dataset; flips are keyed by sample position."""
    samples = []
    records = []
    for i, s in enumerate(dataset):
        original = s.assigned_label
        new_label = flipped.get(i, original)
        samples.append(Sample(id=s.id, text=s.text, assigned_label=new_label, true_label=original))
        if new_label != original:
            records.append(FlipRecord(sample_id=s.id, original_label=original, flipped_label=new_label))
    return dataset.with_samples(samples), records


def inject_symmetric(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, list[FlipRecord]]:
    """Flip round(ratio*n) labels, each to a uniformly random other class."""
    if not 0.0 <= ratio <= 1.0:
        raise NoiseError(f"noise ratio must be in [0, 1], got {ratio}")
    _check_clean(dataset)
    n, n_classes = len(dataset), len(dataset.classes)
    k = _round_half_up(ratio * n)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    draws = rng.integers(0, n_classes - 1, size=k)
    flipped = {}
    for pos, draw in zip(chosen.tolist(), draws.tolist()):
        original = dataset[pos].assigned_label
        flipped[pos] = draw if draw < original else draw + 1
    return _apply_flips(dataset, flipped)


def cyclic_map(n_classes: int) -> dict[int, int]:
    return {c: (c + 1) % n_classes for c in range(n_classes)}


def inject_asymmetric(
    dataset: Dataset, ratio: float, transition_map: dict[int, int] | None, seed: int
) -> tuple[Dataset, list[FlipRecord]]:
    """Flip round(ratio*n) labels through a class transition map (default cyclic)."""
    if not 0.0 <= ratio <= 1.0:
        raise NoiseError(f"noise ratio must be in [0, 1], got {ratio}")
    _check_clean(dataset)
    n, n_classes = len(dataset), len(dataset.classes)
    if transition_map is None:
        transition_map = cyclic_map(n_classes)
    for c in range(n_classes):
        if c not in transition_map:
            raise NoiseError(f"transition map missing class {c}")
        if transition_map[c] == c:
            raise NoiseError(f"transition map has a fixed point at class {c}")
        if not 0 <= transition_map[c] < n_classes:
            raise NoiseError(f"transition map target {transition_map[c]} out of range")
    k = _round_half_up(ratio * n)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    flipped = {pos: transition_map[dataset[pos].assigned_label] for pos in chosen.tolist()}
    return _apply_flips(dataset, flipped)


def _text_uniforms(seed: int, text: str) -> tuple[float, float]:
    """Two reproducible uniforms in (0, 1) derived from (seed, text) only.

    Samples with identical text therefore share their flip-rate draw, their
    selection key, and their destination class.
    """
    digest = hashlib.blake2b(f"{seed}:{text}".encode("utf-8"), digest_size=16).digest()
    a = int.from_bytes(digest[:8], "big")
    b = int.from_bytes(digest[8:], "big")
    return (a + 0.5) / 2.0**64, (b + 0.5) / 2.0**64


def inject_instance_dependent(
    dataset: Dataset,
    ratio: float,
    seed: int,
    feature_projection_seed: int = 0,
    featurizer: HashedFeaturizer | None = None,
) -> tuple[Dataset, list[FlipRecord]]:
    """Flip round(ratio*n) labels with feature-dependent rates and destinations.

    Each sample draws a flip rate from a truncated normal centred on
    ``ratio`` (clipped to [0, 1]) and a selection key via weighted sampling
    without replacement, so higher-rate samples are flipped preferentially
    while the total flip count stays exact. The destination class is the
    argmax, over the non-true classes, of a seeded random projection of the
    sample's hashed token features.
    """
    if not 0.0 <= ratio <= 1.0:
        raise NoiseError(f"noise ratio must be in [0, 1], got {ratio}")
    _check_clean(dataset)
    n, n_classes = len(dataset), len(dataset.classes)
    k = _round_half_up(ratio * n)
    if k == 0:
        return _apply_flips(dataset, {})

    featurizer = featurizer or HashedFeaturizer()
    texts = dataset.texts()
    uniforms = np.array([_text_uniforms(seed, t) for t in texts], dtype=np.float64)
    a = (0.0 - ratio) / IDN_RATE_STD
    b = (1.0 - ratio) / IDN_RATE_STD
    rates = truncnorm.ppf(uniforms[:, 0], a, b, loc=ratio, scale=IDN_RATE_STD)
    rates = np.clip(rates, 1e-12, 1.0)
    # Weighted sampling without replacement via exponentiated uniform keys;
    # larger keys win, so high-rate samples flip first.
    keys = uniforms[:, 1] ** (1.0 / rates)
    order = np.argsort(-keys, kind="stable")
    chosen = order[:k]

    projection = np.random.default_rng(feature_projection_seed).standard_normal(
        (featurizer.n_buckets, n_classes)
    )
    scores = np.asarray(featurizer.transform(texts) @ projection)
    labels = dataset.assigned_labels()
    scores[np.arange(n), labels] = -np.inf
    destinations = np.argmax(scores, axis=1)

    flipped = {int(pos): int(destinations[pos]) for pos in chosen}
    out, records = _apply_flips(dataset, flipped)
    return out, records


def inject(dataset: Dataset, spec: NoiseSpec) -> tuple[Dataset, list[FlipRecord]]:
    """Dispatch on the spec's noise kind."""
    if spec.kind == "SN":
        return inject_symmetric(dataset, spec.ratio, spec.seed)
    if spec.kind == "AN":
        return inject_asymmetric(dataset, spec.ratio, spec.transition_map, spec.seed)
    return inject_instance_dependent(dataset, spec.ratio, spec.seed, spec.feature_projection_seed)


def save_flip_records(records: list[FlipRecord], classes, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "original_label", "flipped_label"])
        for r in records:
            writer.writerow([r.sample_id, classes.name(r.original_label), classes.name(r.flipped_label)])


def load_flip_records(path, classes) -> list[FlipRecord]:
    import csv

    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "original_label", "flipped_label"]:
            raise DatasetError(f"{path}: invalid flip record header {header!r}")
        for row in reader:
            records.append(
                FlipRecord(sample_id=row[0], original_label=classes.index(row[1]), flipped_label=classes.index(row[2]))
            )
    return records
