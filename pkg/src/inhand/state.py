"""Model state: the four adapters, temperature, hyperparameters, optimizer.

Checkpoints are a single JSON object with base64 float32 tensors, so a
save/load round trip is bit-identical on every stored value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bundles import decode_f32, encode_f32
from .numerics import PARAM_NAMES, AdamState, AdapterParams, init_adapter
from .validation import ValidationError

CHECKPOINT_VERSION = 1
ADAPTER_NAMES = ("visual", "textual", "contact", "match")


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or version-mismatched checkpoints."""


@dataclass
class ModelState:
    adapters: dict[str, AdapterParams]
    tau: float
    hyperparams: dict = field(default_factory=dict)
    optimizer: dict[str, AdamState] | None = None

    def __post_init__(self):
        missing = set(ADAPTER_NAMES) - set(self.adapters)
        if missing:
            raise ValidationError(f"missing adapters: {sorted(missing)}")
        if not self.tau > 0:
            raise ValidationError(f"temperature must be positive, got {self.tau}")

    @property
    def d_v(self) -> int:
        return self.adapters["visual"].d_v

    @property
    def d_h(self) -> int:
        return self.adapters["visual"].d_h

    def copy(self) -> "ModelState":
        return ModelState(
            adapters={n: p.copy() for n, p in self.adapters.items()},
            tau=self.tau,
            hyperparams=dict(self.hyperparams),
            optimizer=None,
        )


def init_model_state(d_v: int, tau: float = 0.07, seed: int = 0,
                     d_h: int | None = None, hyperparams: dict | None = None,
                     init_scale: float = 0.01) -> ModelState:
    """Fresh state with near-identity adapters, one seeded draw per adapter."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    adapters = {name: init_adapter(d_v, d_h, rng, scale=init_scale)
                for name in ADAPTER_NAMES}
    return ModelState(adapters=adapters, tau=tau, hyperparams=hyperparams or {})


def _encode_matrix(m: np.ndarray) -> str:
    return encode_f32(np.asarray(m, dtype=np.float64).reshape(-1))


def _decode_matrix(payload: str, shape: tuple[int, ...], name: str) -> np.ndarray:
    vec = decode_f32(payload, name, allow_zero=True)
    expected = int(np.prod(shape))
    if vec.size != expected:
        raise CheckpointError(f"{name}: expected {expected} values, got {vec.size}")
    return vec.reshape(shape)


def _tensor_shapes(d_v: int, d_h: int) -> dict[str, tuple[int, ...]]:
    return {"w1": (d_h, d_v), "b1": (d_h,), "w2": (d_v, d_h), "b2": (d_v,)}


def save_checkpoint(state: ModelState, path: str) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "dims": {"d_v": state.d_v, "d_h": state.d_h},
        "tau": state.tau,
        "hyperparams": state.hyperparams,
        "adapters": {
            name: {t: _encode_matrix(getattr(params, t)) for t in PARAM_NAMES}
            for name, params in state.adapters.items()
        },
        "optimizer": None,
    }
    if state.optimizer is not None:
        doc["optimizer"] = {
            name: {
                "step": opt.step, "lr": opt.lr, "beta1": opt.beta1,
                "beta2": opt.beta2, "eps": opt.eps,
                "m": {t: _encode_matrix(opt.m[t]) for t in PARAM_NAMES},
                "v": {t: _encode_matrix(opt.v[t]) for t in PARAM_NAMES},
            }
            for name, opt in state.optimizer.items()
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str) -> ModelState:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: not a JSON object")
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        d_v = int(doc["dims"]["d_v"])
        d_h = int(doc["dims"]["d_h"])
        shapes = _tensor_shapes(d_v, d_h)
        adapters = {}
        for name in ADAPTER_NAMES:
            tensors = doc["adapters"][name]
            adapters[name] = AdapterParams(**{
                t: _decode_matrix(tensors[t], shapes[t], f"{name}.{t}")
                for t in PARAM_NAMES
            })
        optimizer = None
        if doc.get("optimizer") is not None:
            optimizer = {}
            for name, od in doc["optimizer"].items():
                optimizer[name] = AdamState(
                    lr=float(od["lr"]), beta1=float(od["beta1"]),
                    beta2=float(od["beta2"]), eps=float(od["eps"]),
                    step=int(od["step"]),
                    m={t: _decode_matrix(od["m"][t], shapes[t], f"opt.{name}.m.{t}")
                       for t in PARAM_NAMES},
                    v={t: _decode_matrix(od["v"][t], shapes[t], f"opt.{name}.v.{t}")
                       for t in PARAM_NAMES},
                )
        return ModelState(
            adapters=adapters, tau=float(doc["tau"]),
            hyperparams=doc.get("hyperparams") or {}, optimizer=optimizer,
        )
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
