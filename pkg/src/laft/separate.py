"""Two-stage separation of training data into Easy-Clean / Hard-Clean / True-Noisy.

Coarse separation trusts the oracle: samples whose oracle label agrees with
the assigned label form the Easy-Clean set, computed once because oracle
outputs never change during a run. The disagreed remainder is re-split every
epoch: samples where both the oracle and the classifier are unconfident are
Hard-Clean, the rest True-Noisy. The classifier cutoff rises with the epoch
while the oracle cutoff stays fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .corpus import Dataset

__all__ = [
    "SeparationError",
    "ThresholdSchedule",
    "SubsetAssignment",
    "classifier_confidence",
    "adaptive_threshold",
    "coarse_separate",
    "fine_separate",
    "ideal_separate",
    "assign_subsets",
    "EC",
    "HC",
    "TN",
]

EC, HC, TN = "EC", "HC", "TN"


class SeparationError(ValueError):
    """Invalid separation input."""


@dataclass(frozen=True)
class ThresholdSchedule:
    """Fixed oracle cutoff plus the rising classifier cutoff.

    The classifier cutoff at epoch t is ``tau_tilde - exp(-lam * t)``:
    negative at t=0 (so the Hard-Clean set starts empty, a warm-up effect
    kept deliberately), strictly increasing, approaching ``tau_tilde``.
    """

    tau_hat: float = 0.8
    tau_tilde: float = 0.8
    lam: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.tau_hat <= 1.0:
            raise SeparationError(f"tau_hat must be in (0, 1], got {self.tau_hat}")
        if not 0.0 < self.tau_tilde <= 1.0:
            raise SeparationError(f"tau_tilde must be in (0, 1], got {self.tau_tilde}")
        if self.lam <= 0.0:
            raise SeparationError(f"lam must be positive, got {self.lam}")


def adaptive_threshold(t: int, schedule: ThresholdSchedule) -> float:
    """Classifier-confidence cutoff at epoch ``t``."""
    if t < 0:
        raise SeparationError(f"epoch must be nonnegative, got {t}")
    return schedule.tau_tilde - math.exp(-schedule.lam * t)


def classifier_confidence(logits) -> np.ndarray:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise SeparationError("logits contain non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def coarse_separate(train: Dataset, llm_labels: Mapping[str, int]) -> tuple[set[str], set[str]]:
    """Split ids into (agreed, disagreed) by oracle-label vs assigned-label match."""
    easy: set[str] = set()
    disagreed: set[str] = set()
    for s in train:
        if s.id not in llm_labels:
            raise SeparationError(f"missing oracle label for sample {s.id!r}")
        if llm_labels[s.id] == s.assigned_label:
            easy.add(s.id)
        else:
            disagreed.add(s.id)
    return easy, disagreed


def fine_separate(
    disagreed: Iterable[str],
    oracle_confidences: Mapping[str, np.ndarray],
    classifier_confidences: Mapping[str, np.ndarray],
    schedule: ThresholdSchedule,
    t: int,
    use_oracle_threshold: bool = True,
) -> tuple[set[str], set[str]]:
    """Split the disagreed set into (hard-clean, true-noisy) at epoch ``t``.

    A sample is hard-clean only when its max oracle confidence is strictly
    below the fixed cutoff and its max classifier confidence strictly below
    the epoch cutoff; boundary-equal values stay true-noisy.
    ``use_oracle_threshold=False`` drops the oracle-side condition (the
    classifier-only ablation).
    """
    cutoff = adaptive_threshold(t, schedule)
    hard: set[str] = set()
    noisy: set[str] = set()
    for sid in disagreed:
        if sid not in classifier_confidences:
            raise SeparationError(f"missing classifier confidence for sample {sid!r}")
        model_ok = float(np.max(classifier_confidences[sid])) < cutoff
        if use_oracle_threshold:
            if sid not in oracle_confidences:
                raise SeparationError(f"missing oracle confidence for sample {sid!r}")
            oracle_ok = float(np.max(oracle_confidences[sid])) < schedule.tau_hat
        else:
            oracle_ok = True
        if oracle_ok and model_ok:
            hard.add(sid)
        else:
            noisy.add(sid)
    return hard, noisy


def ideal_separate(disagreed: Iterable[str], train: Dataset) -> tuple[set[str], set[str]]:
    """Ground-truth split of the disagreed set (diagnostics only).

    Hard-clean is where the assigned label matches the true label, true-noisy
    where it does not; requires held-out true labels.
    """
    if not train.has_true_labels:
        raise SeparationError("ideal separation needs true labels")
    by_id = {s.id: s for s in train}
    disagreed = set(disagreed)
    hard_star: set[str] = set()
    noisy_star: set[str] = set()
    for sid in disagreed:
        if sid not in by_id:
            raise SeparationError(f"unknown sample id {sid!r}")
        s = by_id[sid]
        if s.assigned_label == s.true_label:
            hard_star.add(sid)
        else:
            noisy_star.add(sid)
    return hard_star, noisy_star


@dataclass(frozen=True)
class SubsetAssignment:
    """Epoch-indexed partition of all training ids into EC / HC / TN."""

    epoch: int
    mapping: dict[str, str]

    def __post_init__(self):
        for sid, subset in self.mapping.items():
            if subset not in (EC, HC, TN):
                raise SeparationError(f"invalid subset {subset!r} for sample {sid!r}")

    def ids_in(self, subset: str) -> set[str]:
        return {sid for sid, name in self.mapping.items() if name == subset}

    def sizes(self) -> dict[str, int]:
        counts = {EC: 0, HC: 0, TN: 0}
        for name in self.mapping.values():
            counts[name] += 1
        return counts


def assign_subsets(
    train: Dataset,
    easy: set[str],
    oracle_confidences: Mapping[str, np.ndarray],
    classifier_confidences: Mapping[str, np.ndarray],
    schedule: ThresholdSchedule,
    t: int,
    use_oracle_threshold: bool = True,
) -> SubsetAssignment:
    """Combine a fixed coarse split with the epoch-t fine split into one partition."""
    all_ids = set(train.ids())
    if not easy <= all_ids:
        raise SeparationError("easy set contains unknown sample ids")
    disagreed = all_ids - easy
    hard, noisy = fine_separate(
        disagreed, oracle_confidences, classifier_confidences, schedule, t, use_oracle_threshold
    )
    mapping: dict[str, str] = {}
    for sid in all_ids:
        mapping[sid] = EC if sid in easy else (HC if sid in hard else TN)
    return SubsetAssignment(epoch=t, mapping=mapping)
