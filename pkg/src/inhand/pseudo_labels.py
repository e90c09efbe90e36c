"""Stage-2 supervision derived from matched-pair similarity matrices.

Per sample, the (N, 2M) object-phrase similarities condense to an (N, 2)
per-hand score by taking the max over each hand's phrase block. A batch-wide
percentile of the valid condensed scores thresholds binary contact labels;
the per-hand argmax yields the matching label. Entries are valid only when
the hand is present and its mask overlaps the object's mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import ValidationError, as_float_array

HAND_ORDER = ("left", "right")


@dataclass
class CondensedScores:
    """Per-(object, hand) evidence: values (N, 2), with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid.shape or self.values.ndim != 2 \
                or self.values.shape[1] != 2:
            raise ValidationError(
                f"condensed scores must be (N, 2) with matching mask, got "
                f"{self.values.shape} / {self.valid.shape}")

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]


@dataclass
class PseudoLabels:
    """contact: (N, 2) binary matrix; match: per hand side an object index or None."""

    contact: np.ndarray
    match: dict[str, int | None]


def condense_scores(a: np.ndarray, num_phrases: int, hand_ious: np.ndarray,
                    hands_present: dict[str, bool] | None = None) -> CondensedScores:
    """Collapse the (N, 2M) similarity block to per-hand evidence.

    hand_ious is an (N, 2) array of mask IoU between each object and the
    left/right hand masks (0 where the hand is absent). hands_present flags
    default to deriving presence from the ious being provided per side.
    """
    a = as_float_array(a, "similarity block")
    hand_ious = as_float_array(hand_ious, "hand ious")
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != 2 * num_phrases:
        raise ValidationError(
            f"similarity block has {a.shape[1]} columns, expected 2*{num_phrases}")
    if hand_ious.shape != (n, 2):
        raise ValidationError(f"hand ious must be (N, 2), got {hand_ious.shape}")
    if n == 0 or num_phrases == 0:
        return CondensedScores(values=np.zeros((n, 2)), valid=np.zeros((n, 2), dtype=bool))
    values = np.stack([
        a[:, :num_phrases].max(axis=1),
        a[:, num_phrases:].max(axis=1),
    ], axis=1)
    present = np.ones(2, dtype=bool)
    if hands_present is not None:
        present = np.array([bool(hands_present.get(s, False)) for s in HAND_ORDER])
    valid = (hand_ious > 0.0) & present[None, :]
    return CondensedScores(values=values, valid=valid)


def percentile_threshold(values: np.ndarray, gamma: float) -> float:
    """Nearest-rank lower percentile: sorted ascending, the ceil(gamma*n)-th value."""
    values = as_float_array(values, "score pool").reshape(-1)
    if values.size == 0:
        raise ValidationError("percentile of an empty score pool")
    if not 0.0 < gamma < 1.0:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    # tiny slack keeps ceil exact when gamma*n is an integer up to float error
    rank = max(1, math.ceil(gamma * values.size - 1e-12))
    return float(np.sort(values)[rank - 1])


def contact_pseudo_labels(scores: CondensedScores, rho: float) -> np.ndarray:
    """Binary contact labels: valid entries strictly above the threshold."""
    return (scores.valid & (scores.values > rho)).astype(np.int8)


def matching_pseudo_labels(scores: CondensedScores) -> dict[str, int | None]:
    """Per hand, the valid object with the highest evidence (ties: lowest index)."""
    match: dict[str, int | None] = {}
    for k, side in enumerate(HAND_ORDER):
        valid_k = scores.valid[:, k]
        if not valid_k.any():
            match[side] = None
            continue
        column = np.where(valid_k, scores.values[:, k], -np.inf)
        match[side] = int(np.argmax(column))
    return match
