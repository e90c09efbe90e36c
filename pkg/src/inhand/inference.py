"""Narration-free prediction, the interaction-class IoU suite, and baselines.

Prediction reads only object/hand masks and embeddings: for every present
hand, the matching head picks its best valid object and the contactness head
gates the pick at probability 0.5. When both hands pick the same object and
both pass the gate, the mask is reported as a both-hands interaction.
Evaluation aggregates dataset-level IoU (sum of intersections over sum of
unions) per interaction class, plus the hand-agnostic Either class computed
on per-image union masks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .bundles import SampleBundle
from .masks import (RleMask, interval_area, mask_iou, merge_intervals,
                    _intersect_intervals)
from .numerics import adapter_forward, sigmoid
from .pseudo_labels import HAND_ORDER
from .state import ModelState
from .validation import ValidationError

logger = logging.getLogger(__name__)

CLASSES = ("E", "L", "R", "B")
SIDE_TO_CLASS = {"left": "L", "right": "R"}


@dataclass
class Prediction:
    """Per-image output: one optional mask per interaction class."""

    id: str
    width: int
    height: int
    left: RleMask | None = None
    right: RleMask | None = None
    both: RleMask | None = None
    indices: dict[str, int | None] = field(default_factory=dict)
    probabilities: dict[str, float | None] = field(default_factory=dict)

    def union_intervals(self) -> list[tuple[int, int]]:
        parts = [m.intervals() for m in (self.left, self.right, self.both) if m is not None]
        return merge_intervals(parts)


def _empty_prediction(bundle: SampleBundle) -> Prediction:
    return Prediction(id=bundle.id, width=bundle.width, height=bundle.height)


def _resolve_both(bundle: SampleBundle, picks: dict[str, int],
                  probs: dict[str, float | None], indices: dict[str, int | None]
                  ) -> Prediction:
    """Apply the shared-object rule: same pick by both gated hands becomes 'both'."""
    pred = Prediction(id=bundle.id, width=bundle.width, height=bundle.height,
                      indices=indices, probabilities=probs)
    if len(picks) == 2 and picks.get("left") == picks.get("right"):
        pred.both = bundle.objects[picks["left"]].mask
    else:
        for side, idx in picks.items():
            setattr(pred, side, bundle.objects[idx].mask)
    return pred


def predict(state: ModelState, bundle: SampleBundle) -> Prediction:
    """Segment in-hand objects from visual inputs only.

    Narration and phrase embeddings are never read; feeding a bundle with
    corrupted phrases produces bit-identical output.
    """
    if not bundle.objects or not bundle.hands:
        return _empty_prediction(bundle)
    visual = state.adapters["visual"]
    w = adapter_forward(visual, np.stack([o.embedding for o in bundle.objects]))
    indices: dict[str, int | None] = {}
    probs: dict[str, float | None] = {}
    picks: dict[str, int] = {}
    match_params = state.adapters["match"]
    contact_params = state.adapters["contact"]
    u_match = adapter_forward(match_params, w)
    u_contact = adapter_forward(contact_params, w)
    for side in HAND_ORDER:
        hand = bundle.hand(side)
        if hand is None:
            continue
        ious = np.array([mask_iou(o.mask, hand.mask) for o in bundle.objects])
        valid = ious > 0.0
        if not valid.any():
            indices[side] = None
            probs[side] = None
            continue
        h_adapted = adapter_forward(visual, hand.embedding)
        scores = u_match @ adapter_forward(match_params, h_adapted)
        scores = np.where(valid, scores, -np.inf)
        candidate = int(np.argmax(scores))
        q = float(sigmoid(float(
            u_contact[candidate] @ adapter_forward(contact_params, h_adapted))))
        indices[side] = candidate
        probs[side] = q
        if q >= 0.5:
            picks[side] = candidate
    return _resolve_both(bundle, picks, probs, indices)


def iou_contact_baseline(bundle: SampleBundle) -> Prediction:
    """Assign each hand the object with maximal mask IoU; zero overlap means no contact."""
    if not bundle.objects or not bundle.hands:
        return _empty_prediction(bundle)
    indices: dict[str, int | None] = {}
    probs: dict[str, float | None] = {}
    picks: dict[str, int] = {}
    for side in HAND_ORDER:
        hand = bundle.hand(side)
        if hand is None:
            continue
        ious = np.array([mask_iou(o.mask, hand.mask) for o in bundle.objects])
        best = int(np.argmax(ious))
        if ious[best] <= 0.0:
            indices[side] = None
            probs[side] = None
            continue
        indices[side] = best
        probs[side] = float(ious[best])
        picks[side] = best
    return _resolve_both(bundle, picks, probs, indices)


@dataclass
class HandBox:
    """Detector output: pixel box with a confidence score."""

    x0: float
    y0: float
    x1: float
    y1: float
    score: float = 1.0

    @property
    def center_x(self) -> float:
        return 0.5 * (self.x0 + self.x1)


def hand_side_assign(boxes: list[HandBox], image_width: int) -> list[tuple[int, str]]:
    """Assign left/right labels to detected hands.

    A single hand takes the side of the image half its box center falls in;
    with two hands the leftmost is left and the other right. More than two
    detections keep the two highest-confidence boxes (with a warning).
    """
    if not boxes:
        return []
    order = list(range(len(boxes)))
    if len(boxes) > 2:
        logger.warning("hand_side_assign: %d detections, keeping two highest-confidence",
                       len(boxes))
        order = sorted(order, key=lambda i: -boxes[i].score)[:2]
    if len(order) == 1:
        i = order[0]
        side = "left" if boxes[i].center_x < image_width / 2.0 else "right"
        return [(i, side)]
    a, b = order
    if boxes[a].center_x <= boxes[b].center_x:
        return [(a, "left"), (b, "right")]
    return [(b, "left"), (a, "right")]


@dataclass
class EvalReport:
    iou: dict[str, float]
    mean_lrb: float
    counts: dict[str, int]

    def to_json(self) -> dict:
        return {"iou": self.iou, "mean_lrb": self.mean_lrb, "counts": self.counts}

    def to_table(self) -> str:
        lines = [f"{'class':<8}{'iou':>10}"]
        for cls in CLASSES:
            lines.append(f"{cls:<8}{self.iou[cls]:>10.4f}")
        lines.append(f"{'mean LRB':<8}{self.mean_lrb:>10.4f}")
        lines.append("")
        for key, value in self.counts.items():
            lines.append(f"{key:<20}{value:>8d}")
        return "\n".join(lines)


def _gt_intervals(bundle: SampleBundle, cls: str) -> list[tuple[int, int]]:
    if bundle.gt is None:
        return []
    mask = {"L": bundle.gt.left, "R": bundle.gt.right, "B": bundle.gt.both}[cls]
    return mask.intervals() if mask is not None else []


def _pred_intervals(pred: Prediction, cls: str) -> list[tuple[int, int]]:
    mask = {"L": pred.left, "R": pred.right, "B": pred.both}[cls]
    return mask.intervals() if mask is not None else []


def evaluate(predictions: list[Prediction], bundles: list[SampleBundle]) -> EvalReport:
    """Dataset-level IoU per interaction class against bundle ground truth."""
    if len(predictions) != len(bundles):
        raise ValidationError(
            f"{len(predictions)} predictions vs {len(bundles)} ground-truth bundles")
    inter = {cls: 0 for cls in CLASSES}
    union = {cls: 0 for cls in CLASSES}
    hands_detected = 0
    contacts_predicted = 0
    for pred, bundle in zip(predictions, bundles):
        if pred.id != bundle.id:
            raise ValidationError(f"prediction id {pred.id!r} does not match bundle {bundle.id!r}")
        if (pred.width, pred.height) != (bundle.width, bundle.height):
            raise ValidationError(f"prediction {pred.id}: size mismatch with ground truth")
        hands_detected += len(pred.indices)
        contacts_predicted += sum(m is not None for m in (pred.left, pred.right)) \
            + (2 if pred.both is not None else 0)
        for cls in ("L", "R", "B"):
            p_iv = _pred_intervals(pred, cls)
            g_iv = _gt_intervals(bundle, cls)
            i_area = _intersect_intervals(p_iv, g_iv)
            inter[cls] += i_area
            union[cls] += interval_area(p_iv) + interval_area(g_iv) - i_area
        p_u = pred.union_intervals()
        g_u = merge_intervals([_gt_intervals(bundle, c) for c in ("L", "R", "B")])
        i_area = _intersect_intervals(p_u, g_u)
        inter["E"] += i_area
        union["E"] += interval_area(p_u) + interval_area(g_u) - i_area
    iou = {cls: (inter[cls] / union[cls] if union[cls] > 0 else 1.0) for cls in CLASSES}
    return EvalReport(
        iou=iou,
        mean_lrb=(iou["L"] + iou["R"] + iou["B"]) / 3.0,
        counts={
            "images": len(predictions),
            "hands_detected": hands_detected,
            "contacts_predicted": contacts_predicted,
        },
    )


def matching_accuracy(state: ModelState, bundles: list[SampleBundle]) -> float:
    """Fraction of truly interacting hands whose matched object is the annotated one.

    The annotated target is the object whose mask best overlaps the hand's GT
    mask. Hands without ground truth interaction are skipped; the contact gate
    is ignored here (it is scored by the IoU metrics instead).
    """
    correct = 0
    counted = 0
    for bundle in bundles:
        if bundle.gt is None or not bundle.objects:
            continue
        pred = predict(state, bundle)
        for side in HAND_ORDER:
            gt_mask = bundle.gt.for_side(side) or bundle.gt.both
            if gt_mask is None or gt_mask.area == 0:
                continue
            overlaps = [mask_iou(o.mask, gt_mask) for o in bundle.objects]
            target = int(np.argmax(overlaps))
            if overlaps[target] <= 0:
                continue
            counted += 1
            if pred.indices.get(side) == target:
                correct += 1
    if counted == 0:
        raise ValidationError("no annotated interacting hands to score")
    return correct / counted


def prediction_to_json(pred: Prediction) -> dict:
    def rle(mask):
        return {"counts": list(mask.counts)} if mask is not None else None

    return {
        "id": pred.id, "width": pred.width, "height": pred.height,
        "left": rle(pred.left), "right": rle(pred.right), "both": rle(pred.both),
        "indices": pred.indices, "probabilities": pred.probabilities,
    }


def prediction_from_json(doc: dict) -> Prediction:
    width = int(doc["width"])
    height = int(doc["height"])

    def mask(obj):
        return (RleMask(width=width, height=height, counts=tuple(obj["counts"]))
                if obj is not None else None)

    return Prediction(
        id=str(doc["id"]), width=width, height=height,
        left=mask(doc.get("left")), right=mask(doc.get("right")),
        both=mask(doc.get("both")),
        indices={k: (int(v) if v is not None else None)
                 for k, v in (doc.get("indices") or {}).items()},
        probabilities={k: (float(v) if v is not None else None)
                       for k, v in (doc.get("probabilities") or {}).items()},
    )


def save_predictions(preds: Iterable[Prediction], stream: IO[str] | str) -> int:
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8") as fh:
            return save_predictions(preds, fh)
    n = 0
    for pred in preds:
        stream.write(json.dumps(prediction_to_json(pred), separators=(",", ":")) + "\n")
        n += 1
    return n


def load_predictions(stream: IO[str] | str) -> list[Prediction]:
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8") as fh:
            return load_predictions(fh)
    preds = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            preds.append(prediction_from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: bad prediction record ({exc})") from exc
    return preds
