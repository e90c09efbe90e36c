"""Sample bundles: one egocentric frame's proposals, hands, phrases, and GT.

File format is UTF-8 JSON Lines, one sample per line. Embeddings travel as
base64-encoded little-endian float32; masks as run-length counts (see
masks.py). Loading validates every documented invariant and reports the
offending line number on failure.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .masks import RleMask
from .validation import ValidationError

SIDES = ("left", "right")


def encode_f32(vec: np.ndarray) -> str:
    """Vector -> base64 of little-endian float32 bytes."""
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, name: str = "embedding", allow_zero: bool = False) -> np.ndarray:
    """Inverse of encode_f32, upcast to float64; rejects non-finite values.

    Zero-norm vectors are rejected unless allow_zero is set (embeddings must
    support cosine similarity; raw checkpoint tensors may legitimately be zero).
    """
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise ValidationError(f"{name}: invalid base64 payload") from exc
    if len(raw) % 4 != 0:
        raise ValidationError(f"{name}: payload length {len(raw)} not a multiple of 4")
    vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if vec.size == 0:
        raise ValidationError(f"{name}: empty embedding")
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{name}: non-finite values")
    if not allow_zero and float(np.linalg.norm(vec)) == 0.0:
        raise ValidationError(f"{name}: zero-norm embedding")
    return vec


@dataclass
class ObjectProposal:
    mask: RleMask
    embedding: np.ndarray


@dataclass
class HandEntry:
    side: str
    mask: RleMask
    embedding: np.ndarray

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValidationError(f"unknown hand side {self.side!r}")


@dataclass
class PhraseEntry:
    text: str
    emb_left: np.ndarray
    emb_right: np.ndarray


@dataclass
class GroundTruth:
    left: RleMask | None = None
    right: RleMask | None = None
    both: RleMask | None = None

    def for_side(self, side: str) -> RleMask | None:
        return getattr(self, side)


@dataclass
class SampleBundle:
    id: str
    width: int
    height: int
    narration: str
    objects: list[ObjectProposal] = field(default_factory=list)
    hands: list[HandEntry] = field(default_factory=list)
    phrases: list[PhraseEntry] = field(default_factory=list)
    gt: GroundTruth | None = None

    def __post_init__(self):
        seen = set()
        for hand in self.hands:
            if hand.side in seen:
                raise ValidationError(f"bundle {self.id}: duplicate {hand.side} hand")
            seen.add(hand.side)
        dims = (self.width, self.height)
        for mask in self._all_masks():
            if (mask.width, mask.height) != dims:
                raise ValidationError(
                    f"bundle {self.id}: mask dims {mask.width}x{mask.height} "
                    f"differ from sample dims {self.width}x{self.height}")
        emb_dims = {len(o.embedding) for o in self.objects}
        emb_dims |= {len(h.embedding) for h in self.hands}
        for p in self.phrases:
            emb_dims |= {len(p.emb_left), len(p.emb_right)}
        if len(emb_dims) > 1:
            raise ValidationError(f"bundle {self.id}: mixed embedding dimensions {emb_dims}")

    def _all_masks(self) -> Iterable[RleMask]:
        for o in self.objects:
            yield o.mask
        for h in self.hands:
            yield h.mask
        if self.gt is not None:
            for side in ("left", "right", "both"):
                m = getattr(self.gt, side)
                if m is not None:
                    yield m

    def hand(self, side: str) -> HandEntry | None:
        for h in self.hands:
            if h.side == side:
                return h
        return None

    @property
    def embedding_dim(self) -> int | None:
        if self.objects:
            return len(self.objects[0].embedding)
        if self.hands:
            return len(self.hands[0].embedding)
        if self.phrases:
            return len(self.phrases[0].emb_left)
        return None


def _rle_to_json(mask: RleMask) -> dict:
    return {"counts": list(mask.counts)}


def _rle_from_json(obj, width: int, height: int, name: str) -> RleMask:
    if not isinstance(obj, dict) or "counts" not in obj:
        raise ValidationError(f"{name}: expected an object with a 'counts' field")
    return RleMask(width=width, height=height, counts=tuple(obj["counts"]))


def bundle_to_json(bundle: SampleBundle) -> dict:
    hands = {side: None for side in SIDES}
    for h in bundle.hands:
        hands[h.side] = {"rle": _rle_to_json(h.mask), "emb": encode_f32(h.embedding)}
    doc = {
        "id": bundle.id,
        "width": bundle.width,
        "height": bundle.height,
        "narration": bundle.narration,
        "objects": [
            {"rle": _rle_to_json(o.mask), "emb": encode_f32(o.embedding)}
            for o in bundle.objects
        ],
        "hands": hands,
        "phrases": [
            {"text": p.text, "emb_left": encode_f32(p.emb_left),
             "emb_right": encode_f32(p.emb_right)}
            for p in bundle.phrases
        ],
        "gt": None,
    }
    if bundle.gt is not None:
        doc["gt"] = {
            side: (_rle_to_json(m) if m is not None else None)
            for side, m in (("left", bundle.gt.left), ("right", bundle.gt.right),
                            ("both", bundle.gt.both))
        }
    return doc


def bundle_from_json(doc: dict) -> SampleBundle:
    for key in ("id", "width", "height", "narration", "objects", "hands", "phrases"):
        if key not in doc:
            raise ValidationError(f"missing field {key!r}")
    width = int(doc["width"])
    height = int(doc["height"])
    objects = [
        ObjectProposal(
            mask=_rle_from_json(o.get("rle"), width, height, f"object {i} mask"),
            embedding=decode_f32(o.get("emb", ""), f"object {i} embedding"),
        )
        for i, o in enumerate(doc["objects"])
    ]
    hands = []
    hands_doc = doc["hands"]
    if not isinstance(hands_doc, dict):
        raise ValidationError("'hands' must be an object with left/right slots")
    for side in SIDES:
        entry = hands_doc.get(side)
        if entry is None:
            continue
        hands.append(HandEntry(
            side=side,
            mask=_rle_from_json(entry.get("rle"), width, height, f"{side} hand mask"),
            embedding=decode_f32(entry.get("emb", ""), f"{side} hand embedding"),
        ))
    phrases = [
        PhraseEntry(
            text=str(p.get("text", "")),
            emb_left=decode_f32(p.get("emb_left", ""), f"phrase {j} left embedding"),
            emb_right=decode_f32(p.get("emb_right", ""), f"phrase {j} right embedding"),
        )
        for j, p in enumerate(doc["phrases"])
    ]
    gt = None
    if doc.get("gt") is not None:
        gt_doc = doc["gt"]
        gt = GroundTruth(**{
            side: (_rle_from_json(gt_doc[side], width, height, f"gt {side} mask")
                   if gt_doc.get(side) is not None else None)
            for side in ("left", "right", "both")
        })
    return SampleBundle(
        id=str(doc["id"]), width=width, height=height,
        narration=str(doc["narration"]), objects=objects, hands=hands,
        phrases=phrases, gt=gt,
    )


def load_bundles(stream: IO[str] | str) -> list[SampleBundle]:
    """Parse a JSON-Lines bundle file; errors carry the 1-based line number."""
    if isinstance(stream, str):
        with open(stream, "r", encoding="utf-8") as fh:
            return load_bundles(fh)
    bundles = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: malformed JSON ({exc})") from exc
        try:
            bundles.append(bundle_from_json(doc))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return bundles


def save_bundles(bundles: Iterable[SampleBundle], stream: IO[str] | str) -> int:
    """Write bundles as JSON Lines; returns the number of lines written."""
    if isinstance(stream, str):
        with open(stream, "w", encoding="utf-8") as fh:
            return save_bundles(bundles, fh)
    n = 0
    for bundle in bundles:
        stream.write(json.dumps(bundle_to_json(bundle), separators=(",", ":")) + "\n")
        n += 1
    return n
