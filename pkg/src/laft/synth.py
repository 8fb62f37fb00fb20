"""Synthetic text classification fixtures.

Generates corpora that are linearly separable by construction: every text
contains a few tokens drawn from a class-private vocabulary, padded with
tokens from a large shared background pool. The background tokens give a
high-capacity model room to memorize individual samples, which is exactly
the failure mode label noise exploits.
"""

from __future__ import annotations

import numpy as np

from .corpus import ClassSet, Dataset, Sample

__all__ = ["make_synthetic_dataset", "DEFAULT_CLASS_NAMES"]

DEFAULT_CLASS_NAMES = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")


def make_synthetic_dataset(
    n: int,
    n_classes: int = 4,
    seed: int = 0,
    split_tag: str = "train",
    signal_tokens: int = 2,
    text_len: int = 12,
    class_vocab: int = 12,
    background_vocab: int = 3000,
    id_prefix: str | None = None,
) -> Dataset:
    """Build a clean, separable dataset of ``n`` samples over ``n_classes``.

    Each text holds ``signal_tokens`` draws from its class's private token
    pool and ``text_len - signal_tokens`` draws from the shared background
    pool, shuffled together. Class labels cycle so classes stay balanced.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if not 1 <= signal_tokens <= text_len:
        raise ValueError("signal_tokens must be in [1, text_len]")
    if n_classes <= len(DEFAULT_CLASS_NAMES):
        names = DEFAULT_CLASS_NAMES[:n_classes]
    else:
        names = tuple(f"class{c}" for c in range(n_classes))
    classes = ClassSet(names)
    rng = np.random.default_rng(seed)
    prefix = id_prefix if id_prefix is not None else split_tag
    samples = []
    for i in range(n):
        label = i % n_classes
        sig = [f"{names[label]}tok{int(k)}" for k in rng.integers(0, class_vocab, size=signal_tokens)]
        pad = [f"bg{int(k)}" for k in rng.integers(0, background_vocab, size=text_len - signal_tokens)]
        tokens = sig + pad
        rng.shuffle(tokens)
        samples.append(
            Sample(id=f"{prefix}-{i:05d}", text=" ".join(tokens), assigned_label=label, true_label=None)
        )
    return Dataset(samples, classes, split_tag)
