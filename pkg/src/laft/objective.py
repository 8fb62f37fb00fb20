"""Subset-specific robust losses and their gradients.

Three losses, one per subset:

* easy: cross-entropy against the oracle label;
* hard: cross-entropy against the assigned label with an additive per-class
  weight that grows when oracle and classifier confidence agree strongly;
* noisy: cross-entropy against the oracle's aggregated confidence
  distribution plus a thresholded confidence-sharpening term on the
  classifier's own peak.

The additive weight and the sharpening indicator are data-dependent
constants per evaluation: gradients never flow through them, nor through
the frozen argmax class of the sharpening term. Log arguments are floored
at 1e-12 so saturated softmax outputs cannot produce infinities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .separate import ThresholdSchedule, adaptive_threshold, classifier_confidence

__all__ = [
    "ObjectiveError",
    "LossWeights",
    "LossBreakdown",
    "LOG_FLOOR",
    "loss_easy",
    "phi",
    "loss_hard",
    "delta",
    "loss_noisy",
    "total_loss",
    "cross_entropy_and_grad",
    "subset_losses_and_grad",
    "EASY",
    "HARD",
    "NOISY",
]

LOG_FLOOR = 1e-12

EASY, HARD, NOISY = 0, 1, 2


class ObjectiveError(ValueError):
    """Invalid loss input or non-finite result."""


@dataclass(frozen=True)
class LossWeights:
    """Loss combination weights and the two threshold multipliers."""

    lambda_h: float = 1.0
    lambda_n: float = 1.0
    alpha: float = 1.5
    beta: float = 0.9

    def __post_init__(self):
        if self.lambda_h < 0 or self.lambda_n < 0 or self.beta < 0:
            raise ObjectiveError("loss weights must be nonnegative")
        if self.alpha <= 1.0:
            raise ObjectiveError(f"alpha must exceed 1, got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    loss_easy: float
    loss_hard: float
    loss_noisy: float
    total: float
    n_easy: int
    n_hard: int
    n_noisy: int


def _floored_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_FLOOR))


def loss_easy(p_tilde: np.ndarray, llm_labels: np.ndarray) -> float:
    """Mean cross-entropy of classifier confidences against oracle labels."""
    p = np.asarray(p_tilde, dtype=np.float64)
    y = np.asarray(llm_labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ObjectiveError("easy-loss batch must be a nonempty (batch, classes) array")
    return float(np.mean(-_floored_log(p[np.arange(len(y)), y])))


def phi(p_hat_a, p_tilde, t: int, schedule: ThresholdSchedule, alpha: float):
    """Additive class weight: max(oracle + classifier confidence - alpha * cutoff, 0)."""
    cutoff = alpha * adaptive_threshold(t, schedule)
    return np.maximum(np.asarray(p_hat_a, dtype=np.float64) + np.asarray(p_tilde, dtype=np.float64) - cutoff, 0.0)


def loss_hard(
    p_tilde: np.ndarray,
    assigned: np.ndarray,
    p_hat_a: np.ndarray,
    t: int,
    schedule: ThresholdSchedule,
    alpha: float,
) -> float:
    """Weighted cross-entropy against assigned labels on the hard-clean subset.

    The weight on class j is the assigned-label indicator plus the additive
    confidence weight, used as-is (it may exceed 1).
    """
    p = np.asarray(p_tilde, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ObjectiveError("hard-loss batch must be a nonempty (batch, classes) array")
    y = np.asarray(assigned, dtype=np.int64)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    weights = onehot + phi(p_hat_a, p, t, schedule, alpha)
    return float(np.mean(-np.sum(weights * _floored_log(p), axis=1)))


def delta(p_tilde: np.ndarray, t: int, schedule: ThresholdSchedule, beta: float):
    """Sharpening indicator: 1 where max classifier confidence strictly exceeds beta * cutoff."""
    p = np.asarray(p_tilde, dtype=np.float64)
    cutoff = beta * adaptive_threshold(t, schedule)
    peak = p.max(axis=-1)
    result = (peak > cutoff).astype(np.float64)
    if p.ndim == 1:
        return int(result)
    return result


def loss_noisy(
    p_hat_a: np.ndarray, p_tilde: np.ndarray, t: int, schedule: ThresholdSchedule, beta: float
) -> float:
    """Oracle-distribution cross-entropy plus gated self-confidence sharpening."""
    p = np.asarray(p_tilde, dtype=np.float64)
    q = np.asarray(p_hat_a, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ObjectiveError("noisy-loss batch must be a nonempty (batch, classes) array")
    first = np.mean(-np.sum(q * _floored_log(p), axis=1))
    peak = p.max(axis=1)
    gate = delta(p, t, schedule, beta)
    second = np.mean(-gate * peak * _floored_log(peak))
    return float(first + second)


def total_loss(
    l_easy: float, l_hard: float, l_noisy: float, n_easy: int, n_hard: int, n_noisy: int, weights: LossWeights
) -> LossBreakdown:
    """Combine the subset losses; absent subsets contribute exactly zero."""
    l_e = float(l_easy) if n_easy > 0 else 0.0
    l_h = float(l_hard) if n_hard > 0 else 0.0
    l_n = float(l_noisy) if n_noisy > 0 else 0.0
    total = l_e + weights.lambda_h * l_h + weights.lambda_n * l_n
    return LossBreakdown(
        loss_easy=l_e,
        loss_hard=l_h,
        loss_noisy=l_n,
        total=total,
        n_easy=n_easy,
        n_hard=n_hard,
        n_noisy=n_noisy,
    )


def _weighted_ce_grad(p: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d/dlogits of -sum_j w_j log(max(p_j, floor)) for each row, w constant."""
    mask = (p > LOG_FLOOR).astype(np.float64)
    scale = np.sum(weights * mask, axis=1, keepdims=True)
    return p * scale - weights * mask


def cross_entropy_and_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Plain mean cross-entropy on logits; returns (loss, dloss/dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ObjectiveError("cross-entropy batch must be a nonempty (batch, classes) array")
    y = np.asarray(labels, dtype=np.int64)
    p = classifier_confidence(z)
    loss = float(np.mean(-_floored_log(p[np.arange(len(y)), y])))
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    grad = _weighted_ce_grad(p, onehot) / len(y)
    return loss, grad


def subset_losses_and_grad(
    logits: np.ndarray,
    membership: np.ndarray,
    llm_labels: np.ndarray,
    assigned: np.ndarray,
    p_hat_a: np.ndarray,
    t: int,
    schedule: ThresholdSchedule,
    weights: LossWeights,
    tn_pseudo_label: bool = False,
) -> tuple[LossBreakdown, np.ndarray]:
    """Combined loss over one minibatch and its gradient w.r.t. the logits.

    ``membership`` holds EASY / HARD / NOISY codes per row; each subset's
    loss is averaged over that subset's rows within the batch. The returned
    gradient already includes the combination weights. With
    ``tn_pseudo_label=True`` the noisy term is replaced by cross-entropy
    against the classifier's own frozen argmax (the pseudo-labeling
    ablation).
    """
    z = np.asarray(logits, dtype=np.float64)
    member = np.asarray(membership, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] != member.shape[0]:
        raise ObjectiveError("logits and membership must agree on the batch dimension")
    p = classifier_confidence(z)
    grad = np.zeros_like(z)
    l_e = l_h = l_n = 0.0

    rows_e = np.flatnonzero(member == EASY)
    rows_h = np.flatnonzero(member == HARD)
    rows_n = np.flatnonzero(member == NOISY)

    if rows_e.size:
        pe = p[rows_e]
        ye = np.asarray(llm_labels, dtype=np.int64)[rows_e]
        l_e = loss_easy(pe, ye)
        onehot = np.zeros_like(pe)
        onehot[np.arange(len(ye)), ye] = 1.0
        ge = _weighted_ce_grad(pe, onehot) / rows_e.size
        if not np.all(np.isfinite(ge)):
            raise ObjectiveError("non-finite gradient in the easy-subset term")
        grad[rows_e] += ge

    if rows_h.size:
        ph = p[rows_h]
        yh = np.asarray(assigned, dtype=np.int64)[rows_h]
        qh = np.asarray(p_hat_a, dtype=np.float64)[rows_h]
        l_h = loss_hard(ph, yh, qh, t, schedule, weights.alpha)
        onehot = np.zeros_like(ph)
        onehot[np.arange(len(yh)), yh] = 1.0
        w = onehot + phi(qh, ph, t, schedule, weights.alpha)
        gh = weights.lambda_h * _weighted_ce_grad(ph, w) / rows_h.size
        if not np.all(np.isfinite(gh)):
            raise ObjectiveError("non-finite gradient in the hard-subset term")
        grad[rows_h] += gh

    if rows_n.size:
        pn = p[rows_n]
        if tn_pseudo_label:
            pseudo = np.argmax(pn, axis=1)
            l_n = float(np.mean(-_floored_log(pn[np.arange(len(pseudo)), pseudo])))
            onehot = np.zeros_like(pn)
            onehot[np.arange(len(pseudo)), pseudo] = 1.0
            gn = weights.lambda_n * _weighted_ce_grad(pn, onehot) / rows_n.size
        else:
            qn = np.asarray(p_hat_a, dtype=np.float64)[rows_n]
            l_n = loss_noisy(qn, pn, t, schedule, weights.beta)
            gn = _weighted_ce_grad(pn, qn)
            # Sharpening term: the peak class is frozen, the gate is a constant.
            top = np.argmax(pn, axis=1)
            peak = pn[np.arange(len(top)), top]
            gate = delta(pn, t, schedule, weights.beta)
            coeff = -gate * (np.log(np.maximum(peak, LOG_FLOOR)) + 1.0) * peak
            onehot = np.zeros_like(pn)
            onehot[np.arange(len(top)), top] = 1.0
            gn = gn + coeff[:, None] * (onehot - pn)
            gn = weights.lambda_n * gn / rows_n.size
        if not np.all(np.isfinite(gn)):
            raise ObjectiveError("non-finite gradient in the noisy-subset term")
        grad[rows_n] += gn

    breakdown = total_loss(l_e, l_h, l_n, rows_e.size, rows_h.size, rows_n.size, weights)
    return breakdown, grad
