"""Run-length encoded binary masks and integer-exact overlap arithmetic.

Wire convention: counts are run lengths over the row-major flattened mask,
alternating zero-runs and one-runs, starting with the zero-run (which may
have length 0). All areas are computed directly on run intervals, never by
decoding to pixels, so overlap counts are exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import ValidationError


@dataclass(frozen=True)
class RleMask:
    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"mask dims must be positive, got {self.width}x{self.height}")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValidationError("negative run length")
        if any(c == 0 for c in counts[1:]):
            raise ValidationError("zero-length run after the leading zero-run")
        total = sum(counts)
        if total != self.width * self.height:
            raise ValidationError(
                f"run lengths sum to {total}, expected {self.width * self.height}")

    @property
    def area(self) -> int:
        """Number of set pixels."""
        return sum(self.counts[1::2])

    def intervals(self) -> list[tuple[int, int]]:
        """Half-open [start, end) index ranges of set pixels in the flat mask."""
        out = []
        pos = 0
        for i, c in enumerate(self.counts):
            if i % 2 == 1 and c > 0:
                out.append((pos, pos + c))
            pos += c
        return out


def encode_rle(mask, width: int, height: int) -> RleMask:
    """Encode a flat (or 2-d row-major) binary mask into canonical RLE."""
    flat = np.asarray(mask).reshape(-1)
    if flat.size != width * height:
        raise ValidationError(
            f"mask has {flat.size} pixels, expected {width}x{height}={width * height}")
    bits = (flat != 0).astype(np.int8)
    change = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate(([0], change, [bits.size]))
    counts = [int(b - a) for a, b in zip(bounds[:-1], bounds[1:])]
    if bits[0] == 1:
        counts.insert(0, 0)
    return RleMask(width=width, height=height, counts=tuple(counts))


def decode_rle(mask: RleMask) -> np.ndarray:
    """Inverse of encode_rle: flat uint8 array of length width*height."""
    out = np.zeros(mask.width * mask.height, dtype=np.uint8)
    for start, end in mask.intervals():
        out[start:end] = 1
    return out


def _intersect_intervals(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    """Total overlap length of two sorted disjoint interval lists."""
    total = 0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo < hi:
            total += hi - lo
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def merge_intervals(interval_lists: list[list[tuple[int, int]]]) -> list[tuple[int, int]]:
    """Union of several sorted disjoint interval lists, as one sorted list."""
    items = sorted(iv for lst in interval_lists for iv in lst)
    merged: list[tuple[int, int]] = []
    for start, end in items:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def interval_area(intervals: list[tuple[int, int]]) -> int:
    return sum(e - s for s, e in intervals)


def _check_dims(a: RleMask, b: RleMask) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise ValidationError(
            f"mask dims differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def mask_intersection_area(a: RleMask, b: RleMask) -> int:
    _check_dims(a, b)
    return _intersect_intervals(a.intervals(), b.intervals())


def mask_union_area(a: RleMask, b: RleMask) -> int:
    _check_dims(a, b)
    return a.area + b.area - mask_intersection_area(a, b)


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    _check_dims(a, b)
    union = mask_union_area(a, b)
    if union == 0:
        return 1.0
    return mask_intersection_area(a, b) / union


def empty_mask(width: int, height: int) -> RleMask:
    return RleMask(width=width, height=height, counts=(width * height,))


def rect_mask(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> RleMask:
    """Filled axis-aligned rectangle with half-open bounds, clipped to the grid."""
    x0, x1 = max(0, x0), min(width, x1)
    y0, y1 = max(0, y0), min(height, y1)
    dense = np.zeros((height, width), dtype=np.uint8)
    if x0 < x1 and y0 < y1:
        dense[y0:y1, x0:x1] = 1
    return encode_rle(dense, width, height)
