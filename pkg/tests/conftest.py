"""Shared helpers for the test suite."""

import numpy as np
import pytest

from inhand.masks import RleMask, encode_rle
from inhand.numerics import zero_adapter
from inhand.state import ADAPTER_NAMES, ModelState


def unit(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def mask_from_pixels(pixels, width, height) -> RleMask:
    dense = np.zeros(width * height, dtype=np.uint8)
    for p in pixels:
        dense[p] = 1
    return encode_rle(dense, width, height)


def identity_state(d_v: int, tau: float = 0.07) -> ModelState:
    """All-zero adapters: every adapter is exactly the identity map."""
    return ModelState(adapters={n: zero_adapter(d_v) for n in ADAPTER_NAMES}, tau=tau)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
