"""Training loop: per-epoch re-separation, subset losses, early stopping.

The desk-scale classifier is a hashed bag-of-tokens featurizer feeding a
single linear layer, optimized with Adam. Anything exposing the same
forward contract (text batch to logits, parameter get/set) can be swapped
in; the loop itself never looks inside the model.

Each epoch: freeze the model, compute classifier confidences for the whole
training set from that snapshot, re-partition the data (the coarse oracle
split is computed once, the fine split every epoch), then take seeded
shuffled minibatch steps on the combined subset loss. Validation accuracy
is measured against the assigned labels, which are themselves noisy; no
clean labels are assumed at training time. The returned model carries the
parameters from the best validation epoch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Dataset, Sample
from .features import HashedFeaturizer
from .objective import (
    EASY,
    HARD,
    NOISY,
    LossBreakdown,
    LossWeights,
    ObjectiveError,
    cross_entropy_and_grad,
    subset_losses_and_grad,
)
from .oracle import OracleOutputs
from .separate import (
    EC,
    HC,
    TN,
    SubsetAssignment,
    ThresholdSchedule,
    assign_subsets,
    classifier_confidence,
)

__all__ = [
    "TrainerError",
    "TrainConfig",
    "LinearTextClassifier",
    "Adam",
    "EpochRecord",
    "StepRecord",
    "RunRecord",
    "fit",
    "predict",
    "evaluate_accuracy",
    "write_metrics_csv",
    "write_steps_csv",
    "ABLATIONS",
    "METHODS",
]

ABLATIONS = ("full", "no_coarse", "no_fine", "no_noisy_loss")
METHODS = ("laft", "base")

MODEL_MAGIC = b"LAFTMODL"
MODEL_VERSION = 1


class TrainerError(RuntimeError):
    """Invalid training configuration or a failed run."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    max_tokens: int = 256
    n_buckets: int = 2**15
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: str = "full"
    method: str = "laft"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainerError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise TrainerError(f"batch size must be positive, got {self.batch_size}")
        if self.max_epochs < 0:
            raise TrainerError(f"max epochs must be nonnegative, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise TrainerError(f"patience must be positive, got {self.early_stop_patience}")
        if self.max_tokens < 1 or self.n_buckets < 2:
            raise TrainerError("max_tokens and n_buckets must be positive")
        if self.ablation not in ABLATIONS:
            raise TrainerError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.method not in METHODS:
            raise TrainerError(f"unknown method {self.method!r}; expected one of {METHODS}")


class LinearTextClassifier:
    """Hashed bag-of-tokens features into a zero-initialized linear layer."""

    def __init__(self, class_names: Sequence[str], n_buckets: int = 2**15, max_tokens: int = 256):
        self.class_names = tuple(class_names)
        self.featurizer = HashedFeaturizer(n_buckets=n_buckets, max_tokens=max_tokens)
        self.weights = np.zeros((n_buckets, len(self.class_names)), dtype=np.float64)
        self.bias = np.zeros(len(self.class_names), dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_parameters(self) -> int:
        return self.weights.size + self.bias.size

    def featurize(self, texts: Sequence[str]):
        return self.featurizer.transform(list(texts))

    def logits(self, features) -> np.ndarray:
        return np.asarray(features @ self.weights) + self.bias

    def confidences(self, texts: Sequence[str]) -> np.ndarray:
        return classifier_confidence(self.logits(self.featurize(texts)))

    def get_params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.weights.copy(), self.bias.copy()

    def set_params(self, weights: np.ndarray, bias: np.ndarray) -> None:
        self.weights = np.array(weights, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)

    def save(self, path: str | Path) -> None:
        """Binary layout: magic, u32 version, u64 header length, JSON header,
        then row-major float64 weight and bias payloads."""
        header = json.dumps(
            {
                "class_names": list(self.class_names),
                "n_buckets": self.featurizer.n_buckets,
                "max_tokens": self.featurizer.max_tokens,
                "dtype": "<f8",
                "weights_shape": list(self.weights.shape),
                "bias_shape": list(self.bias.shape),
            },
            sort_keys=True,
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<I", MODEL_VERSION))
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.bias, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "LinearTextClassifier":
        with open(path, "rb") as fh:
            magic = fh.read(len(MODEL_MAGIC))
            if magic != MODEL_MAGIC:
                raise TrainerError(f"{path}: not a model file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != MODEL_VERSION:
                raise TrainerError(f"{path}: unsupported model version {version}")
            (header_len,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(header_len).decode("utf-8"))
            model = cls(
                header["class_names"], n_buckets=header["n_buckets"], max_tokens=header["max_tokens"]
            )
            w_shape = tuple(header["weights_shape"])
            b_shape = tuple(header["bias_shape"])
            w = np.frombuffer(fh.read(8 * int(np.prod(w_shape))), dtype="<f8").reshape(w_shape)
            b = np.frombuffer(fh.read(8 * int(np.prod(b_shape))), dtype="<f8").reshape(b_shape)
            model.set_params(w, b)
        return model


class Adam:
    """Adaptive-moment gradient steps; moments start at zero."""

    def __init__(self, shapes: Sequence[tuple], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.v = [np.zeros(s, dtype=np.float64) for s in shapes]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_total: float
    loss_easy: float
    loss_hard: float
    loss_noisy: float
    n_easy: int
    n_hard: int
    n_noisy: int
    val_accuracy: float
    mean_conf_clean: float | None
    mean_conf_flipped: float | None


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    breakdown: LossBreakdown


@dataclass
class RunRecord:
    """Per-epoch training trace plus final evaluation results."""

    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    assignments: list[SubsetAssignment] = field(default_factory=list)
    best_epoch: int | None = None
    test_accuracy: float | None = None


def _batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _confidence_dict(ids: list[str], probs: np.ndarray) -> dict[str, np.ndarray]:
    return {sid: probs[i] for i, sid in enumerate(ids)}


def fit(
    train: Dataset,
    val: Dataset,
    oracle_outputs: OracleOutputs | None,
    cfg: TrainConfig,
) -> tuple[LinearTextClassifier, RunRecord]:
    """Train a classifier on a noisy dataset; returns the best-validation model.

    For the laft method, oracle outputs (aggregated confidences and oracle
    labels) must cover every training sample. The base method ignores them
    and minimizes plain cross-entropy on the assigned labels.
    """
    if len(train) == 0 or len(val) == 0:
        raise TrainerError("train and validation datasets must be nonempty")
    is_laft = cfg.method == "laft"
    ids = train.ids()
    if is_laft:
        if oracle_outputs is None:
            raise TrainerError("laft training requires oracle outputs")
        oracle_outputs.require(ids)

    model = LinearTextClassifier(train.classes.names, n_buckets=cfg.n_buckets, max_tokens=cfg.max_tokens)
    record = RunRecord()
    if cfg.max_epochs == 0:
        return model, record

    n, n_classes = len(train), model.n_classes
    x_train = model.featurize(train.texts())
    x_val = model.featurize(val.texts())
    assigned = train.assigned_labels()
    val_labels = val.assigned_labels()
    flip_mask = None
    if train.has_true_labels:
        flip_mask = assigned != train.true_labels()

    llm_arr = np.zeros(n, dtype=np.int64)
    p_hat_a = np.zeros((n, n_classes), dtype=np.float64)
    oracle_conf_by_id: dict[str, np.ndarray] = {}
    if is_laft:
        for i, sid in enumerate(ids):
            llm_arr[i] = oracle_outputs.llm_labels[sid]
            p_hat_a[i] = oracle_outputs.aggregated[sid]
        oracle_conf_by_id = oracle_outputs.aggregated

    id_pos = {sid: i for i, sid in enumerate(ids)}
    coarse_easy: set[str] | None = None
    if is_laft and cfg.ablation != "no_coarse":
        coarse_easy = {sid for i, sid in enumerate(ids) if llm_arr[i] == assigned[i]}
    easy_targets = llm_arr if cfg.ablation != "no_coarse" else assigned

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam([model.weights.shape, model.bias.shape], lr=cfg.learning_rate)
    best_val = -np.inf
    best_params = model.get_params()
    best_epoch: int | None = None
    since_improvement = 0

    for t in range(cfg.max_epochs):
        snapshot_probs = classifier_confidence(model.logits(x_train))

        membership = np.full(n, EASY, dtype=np.int64)
        if is_laft:
            easy = coarse_easy
            if cfg.ablation == "no_coarse":
                easy = {sid for i, sid in enumerate(ids) if int(np.argmax(snapshot_probs[i])) == assigned[i]}
            assignment = assign_subsets(
                train,
                easy,
                oracle_conf_by_id,
                _confidence_dict(ids, snapshot_probs),
                cfg.schedule,
                t,
                use_oracle_threshold=cfg.ablation != "no_fine",
            )
            record.assignments.append(assignment)
            for sid, subset in assignment.mapping.items():
                membership[id_pos[sid]] = EASY if subset == EC else (HARD if subset == HC else NOISY)
            sizes = assignment.sizes()
            n_easy, n_hard, n_noisy = sizes[EC], sizes[HC], sizes[TN]
        else:
            n_easy, n_hard, n_noisy = n, 0, 0

        step_parts = []
        for step, batch in enumerate(_batch_indices(n, cfg.batch_size, rng)):
            logits = model.logits(x_train[batch])
            if is_laft:
                breakdown, dlogits = subset_losses_and_grad(
                    logits,
                    membership[batch],
                    easy_targets[batch],
                    assigned[batch],
                    p_hat_a[batch],
                    t,
                    cfg.schedule,
                    cfg.weights,
                    tn_pseudo_label=cfg.ablation == "no_noisy_loss",
                )
            else:
                ce, dlogits = cross_entropy_and_grad(logits, assigned[batch])
                breakdown = LossBreakdown(ce, 0.0, 0.0, ce, len(batch), 0, 0)
            if not np.isfinite(breakdown.total):
                raise TrainerError(f"non-finite loss at epoch {t} step {step}")
            grad_w = np.asarray(x_train[batch].T @ dlogits)
            grad_b = dlogits.sum(axis=0)
            if not (np.all(np.isfinite(grad_w)) and np.all(np.isfinite(grad_b))):
                raise TrainerError(f"non-finite gradient at epoch {t} step {step}")
            optimizer.step([model.weights, model.bias], [grad_w, grad_b])
            record.steps.append(StepRecord(epoch=t, step=step, breakdown=breakdown))
            step_parts.append((breakdown.total, breakdown.loss_easy, breakdown.loss_hard, breakdown.loss_noisy))

        parts = np.asarray(step_parts, dtype=np.float64).mean(axis=0)
        val_pred = np.argmax(model.logits(x_val), axis=1)
        val_accuracy = float(np.mean(val_pred == val_labels))

        conf_clean = conf_flipped = None
        if flip_mask is not None:
            conf_at_assigned = snapshot_probs[np.arange(n), assigned]
            if np.any(~flip_mask):
                conf_clean = float(conf_at_assigned[~flip_mask].mean())
            if np.any(flip_mask):
                conf_flipped = float(conf_at_assigned[flip_mask].mean())

        record.epochs.append(
            EpochRecord(
                epoch=t,
                loss_total=float(parts[0]),
                loss_easy=float(parts[1]),
                loss_hard=float(parts[2]),
                loss_noisy=float(parts[3]),
                n_easy=n_easy,
                n_hard=n_hard,
                n_noisy=n_noisy,
                val_accuracy=val_accuracy,
                mean_conf_clean=conf_clean,
                mean_conf_flipped=conf_flipped,
            )
        )

        if val_accuracy > best_val:
            best_val = val_accuracy
            best_params = model.get_params()
            best_epoch = t
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.early_stop_patience:
                break

    model.set_params(*best_params)
    record.best_epoch = best_epoch
    return model, record


def predict(model: LinearTextClassifier, samples: Sequence[Sample] | Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Confidences and argmax labels (lowest index wins ties) for a batch."""
    texts = [s.text for s in samples]
    conf = model.confidences(texts)
    return conf, np.argmax(conf, axis=1)


def evaluate_accuracy(model: LinearTextClassifier, test: Dataset) -> float:
    """Fraction of argmax predictions matching the dataset's labels."""
    if len(test) == 0:
        raise TrainerError("cannot evaluate on an empty dataset")
    _, labels = predict(model, test)
    return float(np.mean(labels == test.assigned_labels()))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(record: RunRecord, path: str | Path) -> None:
    """One row per completed epoch; floats use shortest round-trip repr."""
    lines = [
        "epoch,loss_total,loss_easy,loss_hard,loss_noisy,n_easy,n_hard,n_noisy,"
        "val_accuracy,mean_conf_clean,mean_conf_flipped"
    ]
    for e in record.epochs:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    e.epoch,
                    e.loss_total,
                    e.loss_easy,
                    e.loss_hard,
                    e.loss_noisy,
                    e.n_easy,
                    e.n_hard,
                    e.n_noisy,
                    e.val_accuracy,
                    e.mean_conf_clean,
                    e.mean_conf_flipped,
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_steps_csv(record: RunRecord, path: str | Path) -> None:
    lines = ["epoch,step,loss_total,loss_easy,loss_hard,loss_noisy,n_easy,n_hard,n_noisy"]
    for s in record.steps:
        b = s.breakdown
        lines.append(
            ",".join(
                _fmt(v)
                for v in (s.epoch, s.step, b.total, b.loss_easy, b.loss_hard, b.loss_noisy, b.n_easy, b.n_hard, b.n_noisy)
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
