"""Dense-vector math for the four trainable adapters.

Everything here is plain float64 numpy: a two-layer residual MLP with
hand-derived gradients, cosine similarity, a numerically stable softmax
and sigmoid, and an Adam optimizer. The residual form means a freshly
initialized adapter is (almost exactly) the identity map, so untrained
adapters pass frozen embeddings through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import ValidationError, as_float_array

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class AdapterParams:
    """Weights of one residual MLP: y = x + w2 @ relu(w1 @ x + b1) + b2.

    Shapes: w1 (d_h, d_v), b1 (d_h,), w2 (d_v, d_h), b2 (d_v,).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        d_h, d_v = np.shape(self.w1)
        if np.shape(self.b1) != (d_h,) or np.shape(self.w2) != (d_v, d_h) \
                or np.shape(self.b2) != (d_v,):
            raise ValidationError(
                "inconsistent adapter shapes: "
                f"w1 {np.shape(self.w1)}, b1 {np.shape(self.b1)}, "
                f"w2 {np.shape(self.w2)}, b2 {np.shape(self.b2)}"
            )
        for name in PARAM_NAMES:
            setattr(self, name, as_float_array(getattr(self, name), f"adapter {name}"))

    @property
    def d_v(self) -> int:
        return self.w2.shape[0]

    @property
    def d_h(self) -> int:
        return self.w1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "AdapterParams":
        return AdapterParams(*(getattr(self, n).copy() for n in PARAM_NAMES))


@dataclass
class AdapterGrads:
    """Parameter gradients, same shapes as AdapterParams."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def add_(self, other: "AdapterGrads") -> "AdapterGrads":
        for name in PARAM_NAMES:
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def scale_(self, factor: float) -> "AdapterGrads":
        for name in PARAM_NAMES:
            getattr(self, name).__imul__(factor)
        return self

    @staticmethod
    def zeros_like(params: AdapterParams) -> "AdapterGrads":
        return AdapterGrads(*(np.zeros_like(getattr(params, n)) for n in PARAM_NAMES))


def init_adapter(d_v: int, d_h: int | None = None, rng: np.random.Generator | None = None,
                 scale: float = 0.01) -> AdapterParams:
    """Near-identity initialization: weights ~ U(-scale, scale), zero biases."""
    if d_h is None:
        d_h = d_v
    if rng is None:
        rng = np.random.default_rng(0)
    return AdapterParams(
        w1=rng.uniform(-scale, scale, size=(d_h, d_v)),
        b1=np.zeros(d_h),
        w2=rng.uniform(-scale, scale, size=(d_v, d_h)),
        b2=np.zeros(d_v),
    )


def zero_adapter(d_v: int, d_h: int | None = None) -> AdapterParams:
    """All-zero adapter: forward is exactly the identity."""
    if d_h is None:
        d_h = d_v
    return AdapterParams(np.zeros((d_h, d_v)), np.zeros(d_h), np.zeros((d_v, d_h)), np.zeros(d_v))


def adapter_forward(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    """Residual MLP forward. Accepts a single vector (d_v,) or rows (n, d_v)."""
    x = as_float_array(x, "adapter input")
    if x.shape[-1] != params.d_v:
        raise ValidationError(
            f"adapter input dimension {x.shape[-1]} != {params.d_v}")
    z = x @ params.w1.T + params.b1
    return x + np.maximum(z, 0.0) @ params.w2.T + params.b2


def adapter_backward(params: AdapterParams, x: np.ndarray, upstream: np.ndarray
                     ) -> tuple[AdapterGrads, np.ndarray]:
    """Exact chain rule for the residual MLP; relu subgradient at 0 is 0.

    `upstream` is dLoss/dOutput with the same shape as `x`. Returns
    (parameter gradients, dLoss/dInput).
    """
    x = as_float_array(x, "adapter input")
    dy = as_float_array(upstream, "upstream gradient")
    if x.shape != dy.shape or x.shape[-1] != params.d_v:
        raise ValidationError(
            f"backward shape mismatch: x {x.shape}, upstream {dy.shape}, d_v {params.d_v}")
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    z = x2 @ params.w1.T + params.b1
    h = np.maximum(z, 0.0)
    dw2 = dy2.T @ h
    db2 = dy2.sum(axis=0)
    dh = dy2 @ params.w2
    dz = dh * (z > 0.0)
    dw1 = dz.T @ x2
    db1 = dz.sum(axis=0)
    dx = dy2 + dz @ params.w1
    grads = AdapterGrads(dw1, db1, dw2, db2)
    return grads, (dx[0] if squeeze else dx)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    a = as_float_array(a, "cosine input a")
    b = as_float_array(b, "cosine input b")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for zero-norm vectors")
    return float(a @ b) / (na * nb)


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax over a 1-d vector; entries positive and sum to 1."""
    v = as_float_array(v, "softmax input")
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("softmax expects a non-empty 1-d vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a matrix; rejects zero-norm rows. Returns (unit rows, norms)."""
    m = as_float_array(m, "embedding matrix")
    norms = np.linalg.norm(m, axis=-1)
    if np.any(norms == 0.0):
        raise ValidationError("zero-norm embedding row")
    return m / norms[..., None], norms


def normalize_rows_backward(unit: np.ndarray, norms: np.ndarray,
                            d_unit: np.ndarray) -> np.ndarray:
    """Gradient of row normalization: maps dLoss/dUnit back to dLoss/dRaw."""
    dot = np.sum(unit * d_unit, axis=-1, keepdims=True)
    return (d_unit - dot * unit) / norms[..., None]


@dataclass
class AdamState:
    """Adam accumulators for one adapter (one (m, v) pair per tensor)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def for_params(params: AdapterParams, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m={n: np.zeros_like(t) for n, t in params.tensors().items()},
            v={n: np.zeros_like(t) for n, t in params.tensors().items()},
        )


def adam_step(state: AdamState, params: AdapterParams, grads: AdapterGrads) -> None:
    """One Adam update with bias correction; mutates params and state in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        p = getattr(params, name)
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
