"""Semantics-preserving text views for oracle confidence aggregation.

Four augmentation kinds over whitespace tokens: back translation (pluggable,
identity fallback), random insertion, random deletion, and random swap.
Edit-style kinds apply ``max(1, round(rate * len))`` operations when the rate
is positive and none when it is zero, so deletion always shrinks the token
count (never below one token), insertion always grows it, and swap preserves
it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AugmentError",
    "AugmentationKind",
    "augment",
    "make_views",
    "default_kinds",
    "AUGMENTATION_NAMES",
]

AUGMENTATION_NAMES = ("back_translation", "random_insertion", "random_deletion", "random_swap")

Translator = Callable[[str], str]


class AugmentError(ValueError):
    """Unusable augmentation input or configuration."""


@dataclass(frozen=True)
class AugmentationKind:
    name: str
    rate: float = 0.1

    def __post_init__(self):
        if self.name not in AUGMENTATION_NAMES:
            raise AugmentError(f"unknown augmentation {self.name!r}; expected one of {AUGMENTATION_NAMES}")
        if not 0.0 <= self.rate <= 1.0:
            raise AugmentError(f"operation rate must be in [0, 1], got {self.rate}")


def default_kinds(rate: float = 0.1) -> list[AugmentationKind]:
    """The standard four views, one per augmentation kind."""
    return [AugmentationKind(name, rate) for name in AUGMENTATION_NAMES]


def _rng(text: str, kind: AugmentationKind, seed: int) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}:{kind.name}:{text}".encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def _n_ops(rate: float, n_tokens: int) -> int:
    if rate == 0.0:
        return 0
    return max(1, int(np.floor(rate * n_tokens + 0.5)))


def augment(text: str, kind: AugmentationKind, seed: int, translator: Translator | None = None) -> str:
    """Produce one deterministic view of ``text`` for (text, kind, seed)."""
    tokens = text.split()
    if not tokens:
        raise AugmentError("cannot augment empty text")

    if kind.name == "back_translation":
        return translator(text) if translator is not None else text

    n = _n_ops(kind.rate, len(tokens))
    if n == 0:
        return text
    rng = _rng(text, kind, seed)

    if kind.name == "random_deletion":
        n = min(n, len(tokens) - 1)
        if n == 0:
            return text
        drop = set(rng.choice(len(tokens), size=n, replace=False).tolist())
        return " ".join(tok for i, tok in enumerate(tokens) if i not in drop)

    if kind.name == "random_insertion":
        out = list(tokens)
        for _ in range(n):
            tok = out[int(rng.integers(len(out)))]
            out.insert(int(rng.integers(len(out) + 1)), tok)
        return " ".join(out)

    # random_swap
    if len(tokens) < 2:
        return text
    out = list(tokens)
    for _ in range(n):
        i = int(rng.integers(len(out)))
        j = int(rng.integers(len(out) - 1))
        if j >= i:
            j += 1
        out[i], out[j] = out[j], out[i]
    return " ".join(out)


def make_views(
    text: str, kinds: Sequence[AugmentationKind], seed: int, translator: Translator | None = None
) -> list[str]:
    """One view per kind, in the order given."""
    if not kinds:
        raise AugmentError("need at least one augmentation kind")
    return [augment(text, kind, seed, translator) for kind in kinds]
