"""Contactness and matching heads over adapted visual features.

Both heads project object and hand features through a dedicated adapter and
score pairs by dot product. The contactness head answers "is this pair in
contact" (sigmoid + focal loss); the matching head picks one object per hand
(masked column softmax + cross-entropy). Objects whose mask does not overlap
the hand mask are excluded from the matching distribution entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import AdapterParams, adapter_forward, sigmoid
from .state import ModelState
from .validation import ValidationError, as_float_array

LOG_EPS = 1e-12


@dataclass
class HeadForward:
    """Projected features and pairwise logits for one sample and one head."""

    sides: list[str]       # present hands, column order of the logits
    u: np.ndarray          # (N, D) projected object features
    z: np.ndarray          # (K, D) projected hand features
    logits: np.ndarray     # (N, K) pairwise dot products


def _project_pairs(params: AdapterParams, w: np.ndarray,
                   hands: dict[str, np.ndarray]) -> HeadForward:
    sides = [s for s in ("left", "right") if s in hands]
    w = as_float_array(w, "object features")
    n = w.shape[0] if w.ndim == 2 else 0
    if n == 0 or not sides:
        d = params.d_v
        return HeadForward(sides=sides, u=np.zeros((0, d)), z=np.zeros((0, d)),
                           logits=np.zeros((n, len(sides))))
    u = adapter_forward(params, w)
    z = adapter_forward(params, np.stack([hands[s] for s in sides]))
    return HeadForward(sides=sides, u=u, z=z, logits=u @ z.T)


def contactness_scores(state: ModelState, w: np.ndarray,
                       hands: dict[str, np.ndarray]) -> tuple[HeadForward, np.ndarray]:
    """Contact logits C and probabilities Q = sigmoid(C), one column per present hand."""
    fwd = _project_pairs(state.adapters["contact"], w, hands)
    return fwd, sigmoid(fwd.logits)


def matching_scores(state: ModelState, w: np.ndarray, hands: dict[str, np.ndarray],
                    valid: np.ndarray) -> tuple[HeadForward, np.ndarray, np.ndarray]:
    """Matching logits and masked column softmax.

    valid is (N, K) aligned with the returned column order; invalid entries
    get exactly zero probability. Columns with no valid object are flagged
    False in the returned has_valid vector and left all-zero.
    """
    fwd = _project_pairs(state.adapters["match"], w, hands)
    n, k = fwd.logits.shape
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (n, k):
        raise ValidationError(f"valid mask shape {valid.shape} != logits {fwd.logits.shape}")
    probs = np.zeros((n, k))
    has_valid = valid.any(axis=0)
    for col in range(k):
        if not has_valid[col]:
            continue
        sel = valid[:, col]
        logits = fwd.logits[sel, col]
        e = np.exp(logits - logits.max())
        probs[sel, col] = e / e.sum()
    return fwd, probs, has_valid


def focal_contact_loss(q: np.ndarray, labels: np.ndarray, valid: np.ndarray,
                       theta: float) -> tuple[float, np.ndarray]:
    """Focal loss over valid (object, hand) pairs and its gradient w.r.t. the logits.

    Per entry, p is the probability assigned to the true label; the term is
    -(1-p)^theta * log(p), averaged over valid entries. theta = 0 reduces to
    binary cross-entropy. Returns (loss, dLoss/dC); no valid entries yields
    a zero loss and zero gradient.
    """
    q = as_float_array(q, "contact probabilities")
    labels = np.asarray(labels)
    valid = np.asarray(valid, dtype=bool)
    if q.shape != labels.shape or q.shape != valid.shape:
        raise ValidationError("contact loss inputs must share one shape")
    if theta < 0:
        raise ValidationError(f"focusing factor must be >= 0, got {theta}")
    count = int(valid.sum())
    if count == 0:
        return 0.0, np.zeros_like(q)
    pos = labels.astype(bool)
    p = np.where(pos, q, 1.0 - q)
    p = np.clip(p, LOG_EPS, 1.0 - LOG_EPS)
    one_minus = 1.0 - p
    terms = -(one_minus ** theta) * np.log(p)
    loss = float(terms[valid].sum() / count)
    if theta == 0.0:
        d_term_dp = -1.0 / p
    else:
        d_term_dp = theta * (one_minus ** (theta - 1.0)) * np.log(p) - (one_minus ** theta) / p
    dp_dq = np.where(pos, 1.0, -1.0)
    dq_dc = q * (1.0 - q)
    grad = np.where(valid, d_term_dp * dp_dq * dq_dc / count, 0.0)
    return loss, grad


def matching_loss(probs: np.ndarray, sides: list[str],
                  match_labels: dict[str, int | None]) -> tuple[float, np.ndarray]:
    """Cross-entropy against matching pseudo-labels; gradient w.r.t. the logits.

    Averages -log P[target, k] over hands that carry a label. The gradient is
    softmax-minus-onehot on each labeled column (zero on masked-out entries,
    whose probability is exactly zero).
    """
    probs = as_float_array(probs, "matching probabilities")
    grad = np.zeros_like(probs)
    labeled = [(col, match_labels[s]) for col, s in enumerate(sides)
               if match_labels.get(s) is not None]
    if not labeled:
        return 0.0, grad
    total = 0.0
    for col, target in labeled:
        p_t = probs[target, col]
        if p_t == 0.0:
            raise ValidationError(
                f"matching label {target} points at a masked-out object in column {col}")
        total += -np.log(max(p_t, LOG_EPS))
        grad[:, col] += probs[:, col]
        grad[target, col] -= 1.0
    k = len(labeled)
    return float(total / k), grad / k
