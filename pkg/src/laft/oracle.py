"""LLM oracle: prompts, response parsing, confidence aggregation, caching.

The oracle is queried once per text view and returns a confidence value per
class. Confidences are normalized to a probability vector. Queries are
cached on disk keyed by a content hash of (model id, prompt), so repeated
runs over the same corpus never touch the client again; the oracle is fixed
while the classifier trains, which makes the cache semantically lossless.

A deterministic simulated oracle stands in for a real endpoint at desk
scale: it predicts the held-out true label with a configurable accuracy and
is, by construction, independent of the assigned (noisy) labels.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .augment import AugmentationKind, Translator, default_kinds, make_views
from .corpus import ClassSet, Dataset, Sample

__all__ = [
    "OracleError",
    "OracleParseError",
    "OracleUnavailableError",
    "validate_confidences",
    "build_prompt",
    "parse_response",
    "OracleRecord",
    "OracleCache",
    "OracleClient",
    "HttpChatClient",
    "SimulatedClient",
    "CountingClient",
    "query_confidences",
    "aggregate_confidences",
    "llm_label",
    "simulated_oracle",
    "OracleOutputs",
    "fetch_oracle_outputs",
]

PROMPT_TEMPLATE = (
    "Classify the following content: {text}. "
    "Select the label from {class_list} and output a confidence value for each of them."
)
ANSWER_FORMAT_INSTRUCTION = "Answer with one `name: value` line per class."

ENDPOINT_ENV = "LAFT_LLM_ENDPOINT"
API_KEY_ENV = "LAFT_LLM_API_KEY"

SUM_TOLERANCE = 1e-9


class OracleError(RuntimeError):
    """Base class for oracle failures."""


class OracleParseError(OracleError):
    """The raw response did not yield a usable confidence vector."""


class OracleUnavailableError(OracleError):
    """The oracle could not be reached or kept returning garbage."""

    def __init__(self, message: str, sample_id: str | None = None, view_index: int | None = None):
        super().__init__(message)
        self.sample_id = sample_id
        self.view_index = view_index


def validate_confidences(values, n_classes: int) -> np.ndarray:
    """Check and return a confidence vector: n_classes nonnegative reals summing to 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (n_classes,):
        raise OracleError(f"expected {n_classes} confidence values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise OracleError("confidence vector contains non-finite values")
    if np.any(arr < 0):
        raise OracleError("confidence vector contains negative values")
    if abs(float(arr.sum()) - 1.0) > SUM_TOLERANCE:
        raise OracleError(f"confidence vector sums to {arr.sum()!r}, not 1")
    return arr


def build_prompt(text: str, classes: ClassSet) -> str:
    """Render the classification prompt for one text over the ordered class names."""
    class_list = ", ".join(classes.names)
    return PROMPT_TEMPLATE.format(text=text, class_list=class_list) + "\n" + ANSWER_FORMAT_INSTRUCTION


_NUMBER = r"([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"


def parse_response(raw: str, classes: ClassSet) -> np.ndarray:
    """Extract one value per class name from an oracle response.

    Matching is case-insensitive on the class name followed by ``:`` or
    ``=``. Classes that never appear get 0, and the vector is renormalized;
    an extraction where no class matched, or any value is negative, is a
    parse failure.
    """
    values = np.zeros(len(classes), dtype=np.float64)
    matched = np.zeros(len(classes), dtype=bool)
    for j, name in enumerate(classes.names):
        pattern = re.compile(
            r"(?:^|[^\w])" + re.escape(name) + r"['\"]?\s*[:=]\s*" + _NUMBER,
            re.IGNORECASE,
        )
        m = pattern.search(raw)
        if m is None:
            continue
        value = float(m.group(1))
        if value < 0:
            raise OracleParseError(f"negative confidence {value} for class {name!r}")
        values[j] = value
        matched[j] = True
    if not matched.any():
        raise OracleParseError("no class name found in oracle response")
    total = float(values.sum())
    if total <= 0.0:
        raise OracleParseError("all extracted confidences are zero")
    return values / total


@dataclass(frozen=True)
class OracleRecord:
    """One cached oracle interaction."""

    sample_id: str
    view_index: int
    prompt: str
    raw_response: str
    confidences: tuple[float, ...]
    model_id: str

    def vector(self, n_classes: int) -> np.ndarray:
        return validate_confidences(np.asarray(self.confidences), n_classes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "view_index": self.view_index,
                "prompt": self.prompt,
                "raw_response": self.raw_response,
                "confidences": list(self.confidences),
                "model_id": self.model_id,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @staticmethod
    def from_json(payload: str) -> "OracleRecord":
        obj = json.loads(payload)
        return OracleRecord(
            sample_id=obj["sample_id"],
            view_index=int(obj["view_index"]),
            prompt=obj["prompt"],
            raw_response=obj["raw_response"],
            confidences=tuple(float(v) for v in obj["confidences"]),
            model_id=obj["model_id"],
        )


def cache_key(model_id: str, prompt: str) -> str:
    return hashlib.sha256(f"{model_id}\x00{prompt}".encode("utf-8")).hexdigest()


class OracleCache:
    """Append-only directory of JSON oracle records, one file per content key.

    Writes go through a temp file and an atomic rename; an existing record
    is never overwritten, so concurrent writers converge on one value.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> OracleRecord | None:
        path = self._path(key)
        if not path.exists():
            return None
        return OracleRecord.from_json(path.read_text(encoding="utf-8"))

    def put(self, key: str, record: OracleRecord) -> None:
        path = self._path(key)
        if path.exists():
            return
        tmp = path.with_suffix(f".tmp.{os.getpid()}")
        tmp.write_text(record.to_json(), encoding="utf-8")
        os.replace(tmp, path)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


class OracleClient(Protocol):
    model_id: str

    def complete(self, prompt: str, sample: Sample) -> str: ...


class HttpChatClient:
    """Chat-completion-style HTTPS client.

    Endpoint and key come from the ``LAFT_LLM_ENDPOINT`` and
    ``LAFT_LLM_API_KEY`` environment variables unless given explicitly.
    """

    def __init__(
        self,
        model_id: str,
        endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
    ):
        self.model_id = model_id
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        if not self.endpoint:
            raise OracleUnavailableError(f"no oracle endpoint configured; set {ENDPOINT_ENV}")

    def complete(self, prompt: str, sample: Sample) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        }
        response = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        response.raise_for_status()
        body = response.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise OracleParseError(f"unexpected response shape: {body!r}") from exc


def _prompt_rng(seed: int, prompt: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{seed}:{prompt}".encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def _simulated_vector(
    true_label: int, n_classes: int, target_accuracy: float, sharpness: float, rng: np.random.Generator
) -> np.ndarray:
    """Confidence vector whose argmax hits the true label with the target rate.

    The peak mass is drawn around ``sharpness`` so that a fixed confidence
    threshold separates the oracle's confident and unconfident answers; the
    remaining mass is spread evenly, keeping the argmax strict.
    """
    correct = rng.random() < target_accuracy
    if correct:
        top = true_label
    else:
        draw = int(rng.integers(n_classes - 1))
        top = draw if draw < true_label else draw + 1
    floor = 1.0 / n_classes + 0.02
    peak = float(np.clip(rng.normal(sharpness, 0.1), floor, 0.995))
    vec = np.full(n_classes, (1.0 - peak) / (n_classes - 1), dtype=np.float64)
    vec[top] = peak
    return vec


def simulated_oracle(
    sample: Sample, classes: ClassSet, target_accuracy: float, sharpness: float, seed: int
) -> np.ndarray:
    """Deterministic stand-in confidence vector for one sample's original text.

    Depends only on (seed, text, true label); assigned labels never enter,
    so flipping a sample's label cannot change what the oracle says about it.
    """
    n = len(classes)
    if not 1.0 / n <= target_accuracy <= 1.0:
        raise OracleError(f"target accuracy must be in [1/{n}, 1], got {target_accuracy}")
    if sample.true_label is None:
        raise OracleError(f"sample {sample.id!r} has no true label; the simulated oracle needs one")
    rng = _prompt_rng(seed, build_prompt(sample.text, classes))
    return _simulated_vector(sample.true_label, n, target_accuracy, sharpness, rng)


class SimulatedClient:
    """Oracle client backed by :func:`simulated_oracle` draws.

    Responses are rendered as `name: value` lines and go through the normal
    parsing path, exercising the same machinery as a real endpoint.
    """

    def __init__(
        self,
        classes: ClassSet,
        target_accuracy: float,
        sharpness: float = 0.75,
        seed: int = 0,
        model_id: str = "sim-oracle",
    ):
        n = len(classes)
        if not 1.0 / n <= target_accuracy <= 1.0:
            raise OracleError(f"target accuracy must be in [1/{n}, 1], got {target_accuracy}")
        self.classes = classes
        self.target_accuracy = target_accuracy
        self.sharpness = sharpness
        self.seed = seed
        self.model_id = model_id

    def complete(self, prompt: str, sample: Sample) -> str:
        if sample.true_label is None:
            raise OracleError(f"sample {sample.id!r} has no true label; the simulated oracle needs one")
        rng = _prompt_rng(self.seed, prompt)
        vec = _simulated_vector(
            sample.true_label, len(self.classes), self.target_accuracy, self.sharpness, rng
        )
        return "\n".join(f"{name}: {value:.10f}" for name, value in zip(self.classes.names, vec))


class CountingClient:
    """Wraps a client and counts completions; used to verify cache behavior."""

    def __init__(self, inner: OracleClient):
        self.inner = inner
        self.calls = 0

    @property
    def model_id(self) -> str:
        return self.inner.model_id

    def complete(self, prompt: str, sample: Sample) -> str:
        self.calls += 1
        return self.inner.complete(prompt, sample)


def query_confidences(
    sample: Sample,
    classes: ClassSet,
    views: Sequence[str],
    client: OracleClient | None,
    cache: OracleCache,
    retries: int = 3,
    backoff: float = 0.5,
    model_id: str | None = None,
) -> list[np.ndarray]:
    """One confidence vector per view, served from cache whenever possible.

    Cache misses call the client with up to ``retries`` attempts per view and
    exponential backoff between attempts; a vector obtained from the client
    is cached before returning. Exhausted retries raise
    :class:`OracleUnavailableError` carrying the sample id and view index.
    """
    if model_id is None:
        if client is None:
            raise OracleError("need either a client or an explicit model_id")
        model_id = client.model_id
    vectors = []
    for m, view in enumerate(views):
        prompt = build_prompt(view, classes)
        key = cache_key(model_id, prompt)
        record = cache.get(key)
        if record is not None:
            vectors.append(record.vector(len(classes)))
            continue
        if client is None:
            raise OracleUnavailableError(
                f"cache miss for sample {sample.id!r} view {m} and no client configured",
                sample_id=sample.id,
                view_index=m,
            )
        last_error: Exception | None = None
        vec = None
        raw = ""
        for attempt in range(retries):
            try:
                raw = client.complete(prompt, sample)
                vec = parse_response(raw, classes)
                break
            except (OracleParseError, OSError, IOError) as exc:
                last_error = exc
                if attempt + 1 < retries and backoff > 0:
                    time.sleep(backoff * 2**attempt)
        if vec is None:
            raise OracleUnavailableError(
                f"oracle failed for sample {sample.id!r} view {m} after {retries} attempts: {last_error}",
                sample_id=sample.id,
                view_index=m,
            )
        cache.put(
            key,
            OracleRecord(
                sample_id=sample.id,
                view_index=m,
                prompt=prompt,
                raw_response=raw,
                confidences=tuple(float(v) for v in vec),
                model_id=model_id,
            ),
        )
        vectors.append(vec)
    return vectors


def aggregate_confidences(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean over the per-view vectors."""
    if len(vectors) == 0:
        raise OracleError("cannot aggregate an empty list of confidence vectors")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    return stacked.mean(axis=0)


def llm_label(confidences: np.ndarray) -> int:
    """Argmax class; ties go to the lowest index."""
    return int(np.argmax(np.asarray(confidences)))


@dataclass
class OracleOutputs:
    """Per-sample oracle products used by separation and the losses."""

    llm_labels: dict[str, int]
    aggregated: dict[str, np.ndarray]
    base: dict[str, np.ndarray]

    def require(self, ids: Sequence[str]) -> None:
        missing = [i for i in ids if i not in self.llm_labels or i not in self.aggregated]
        if missing:
            raise OracleError(f"oracle outputs missing for {len(missing)} samples, e.g. {missing[:3]}")


def fetch_oracle_outputs(
    dataset: Dataset,
    client: OracleClient | None,
    cache: OracleCache,
    kinds: Sequence[AugmentationKind] | None = None,
    views_seed: int = 0,
    translator: Translator | None = None,
    retries: int = 3,
    backoff: float = 0.5,
    model_id: str | None = None,
) -> OracleOutputs:
    """Fetch oracle confidences for a whole dataset.

    Each sample is queried on its original text, which yields the oracle
    label, and on one augmented view per kind, whose vectors are averaged
    into the aggregated confidence.
    """
    kinds = list(kinds) if kinds is not None else default_kinds()
    labels: dict[str, int] = {}
    aggregated: dict[str, np.ndarray] = {}
    base: dict[str, np.ndarray] = {}
    for sample in dataset:
        views = [sample.text] + make_views(sample.text, kinds, views_seed, translator)
        vectors = query_confidences(
            sample, dataset.classes, views, client, cache, retries=retries, backoff=backoff, model_id=model_id
        )
        labels[sample.id] = llm_label(vectors[0])
        aggregated[sample.id] = aggregate_confidences(vectors[1:])
        base[sample.id] = vectors[0]
    return OracleOutputs(llm_labels=labels, aggregated=aggregated, base=base)
