"""Hashed bag-of-tokens featurizer shared by the classifier and the
feature-dependent noise injector."""

from __future__ import annotations

import zlib

import numpy as np
import scipy.sparse as sp

__all__ = ["HashedFeaturizer"]


class HashedFeaturizer:
    """Map text to L2-normalized token-count vectors in a fixed hash space.

    Tokenization is lowercase whitespace splitting truncated to
    ``max_tokens``; buckets come from CRC-32 of the token bytes, so the
    mapping is stable across processes and platforms.
    """

    def __init__(self, n_buckets: int = 2**15, max_tokens: int = 256):
        if n_buckets < 2:
            raise ValueError("n_buckets must be at least 2")
        if max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        self.n_buckets = n_buckets
        self.max_tokens = max_tokens

    def tokenize(self, text: str) -> list[str]:
        return text.lower().split()[: self.max_tokens]

    def bucket(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % self.n_buckets

    def transform(self, texts: list[str]) -> sp.csr_matrix:
        """Featurize a batch of texts into a sparse (len(texts), n_buckets) matrix."""
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for text in texts:
            counts: dict[int, float] = {}
            for token in self.tokenize(text):
                b = self.bucket(token)
                counts[b] = counts.get(b, 0.0) + 1.0
            norm = np.sqrt(sum(v * v for v in counts.values()))
            for b in sorted(counts):
                indices.append(b)
                data.append(counts[b] / norm if norm > 0 else 0.0)
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
            shape=(len(texts), self.n_buckets),
        )

    def transform_one(self, text: str) -> np.ndarray:
        return np.asarray(self.transform([text]).todense()).ravel()
