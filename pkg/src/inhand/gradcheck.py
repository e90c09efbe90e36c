"""Finite-difference verification of every analytic gradient in the model.

Each check builds a small random batch, evaluates one loss component (or the
weighted total) through the full pipeline, and compares the analytic gradient
of sampled parameter coordinates against central finite differences. The
pipeline's discrete choices (column argmax, percentile labels) are locally
constant almost everywhere, so the comparison is exact up to truncation.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .numerics import PARAM_NAMES, AdapterParams, adapter_backward, adapter_forward
from .state import ADAPTER_NAMES, ModelState
from .trainer import PreparedSample, TrainConfig, compute_batch

TOLERANCE = 1e-4
FD_STEP = 1e-5

# which adapters receive gradient from each component
TOUCHED = {
    "nce": ("visual", "textual"),
    "contact": ("visual", "contact"),
    "match": ("visual", "match"),
    "total": ADAPTER_NAMES,
}


def _random_adapter(rng: np.random.Generator, d_v: int) -> AdapterParams:
    return AdapterParams(
        w1=rng.normal(0.0, 0.3, size=(d_v, d_v)),
        b1=rng.normal(0.0, 0.1, size=d_v),
        w2=rng.normal(0.0, 0.3, size=(d_v, d_v)),
        b2=rng.normal(0.0, 0.1, size=d_v),
    )


def _random_problem(seed: int, d_v: int = 8, batch: int = 3, n_objects: int = 3,
                    n_phrases: int = 2) -> tuple[ModelState, list[PreparedSample]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6AD]))
    state = ModelState(
        adapters={name: _random_adapter(rng, d_v) for name in ADAPTER_NAMES},
        tau=0.1,
    )
    samples = []
    for b in range(batch):
        unit = lambda: (lambda x: x / np.linalg.norm(x))(rng.standard_normal(d_v))
        ious = rng.uniform(0.05, 0.6, size=(n_objects, 2))
        ious[rng.random(size=ious.shape) < 0.3] = 0.0
        ious[0, :] = np.maximum(ious[0, :], 0.1)  # keep at least one valid pair per hand
        samples.append(PreparedSample(
            id=f"g{b}",
            v=np.stack([unit() for _ in range(n_objects)]),
            p=np.stack([unit() for _ in range(2 * n_phrases)]),
            num_phrases=n_phrases,
            hand_sides=["left", "right"],
            h=np.stack([unit(), unit()]),
            ious2=ious,
            hands_present={"left": True, "right": True},
        ))
    return state, samples


def _component_loss(state: ModelState, samples, config: TrainConfig, component: str) -> float:
    result = compute_batch(state, samples, config, want_grads=False)
    if component == "total":
        return result.total(config)
    return result.losses[component]


def _component_grads(state, samples, config: TrainConfig, component: str):
    result = compute_batch(state, samples, config, want_grads=True)
    if component == "total":
        return result.combined_grads(config)
    return result.grads[component]


def _max_rel_err(state: ModelState, samples, config: TrainConfig, component: str,
                 adapter: str, rng: np.random.Generator, coords_per_tensor: int = 3
                 ) -> float:
    analytic = _component_grads(state, samples, config, component)
    if adapter not in analytic:
        return 0.0
    grads = analytic[adapter]
    params = state.adapters[adapter]
    worst = 0.0
    for tensor_name in PARAM_NAMES:
        tensor = getattr(params, tensor_name)
        flat = tensor.reshape(-1)
        g_flat = getattr(grads, tensor_name).reshape(-1)
        n_coords = min(coords_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n_coords, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + FD_STEP
            f_plus = _component_loss(state, samples, config, component)
            flat[i] = old - FD_STEP
            f_minus = _component_loss(state, samples, config, component)
            flat[i] = old
            numeric = (f_plus - f_minus) / (2.0 * FD_STEP)
            err = abs(g_flat[i] - numeric) / max(abs(g_flat[i]), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst


def _adapter_unit_check(seed: int) -> float:
    """Standalone residual-MLP check: parameter and input gradients vs FD."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xADA]))
    d = 5
    params = _random_adapter(rng, d)
    x = rng.standard_normal((4, d))
    coeffs = rng.standard_normal((4, d))

    def f() -> float:
        return float((adapter_forward(params, x) * coeffs).sum())

    grads, d_x = adapter_backward(params, x, coeffs)
    worst = 0.0
    for tensor_name in PARAM_NAMES:
        flat = getattr(params, tensor_name).reshape(-1)
        g_flat = getattr(grads, tensor_name).reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + FD_STEP
            fp = f()
            flat[i] = old - FD_STEP
            fm = f()
            flat[i] = old
            numeric = (fp - fm) / (2 * FD_STEP)
            err = abs(g_flat[i] - numeric) / max(abs(g_flat[i]), abs(numeric), 1.0)
            worst = max(worst, err)
    x_flat = x.reshape(-1)
    dx_flat = d_x.reshape(-1)
    for i in rng.choice(x_flat.size, size=6, replace=False):
        old = x_flat[i]
        x_flat[i] = old + FD_STEP
        fp = f()
        x_flat[i] = old - FD_STEP
        fm = f()
        x_flat[i] = old
        numeric = (fp - fm) / (2 * FD_STEP)
        err = abs(dx_flat[i] - numeric) / max(abs(dx_flat[i]), abs(numeric), 1.0)
        worst = max(worst, err)
    return worst


@dataclass
class GradcheckReport:
    checks: list[dict]
    max_rel_err: float
    tolerance: float
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def to_json(self) -> dict:
        return {
            "pass": self.passed,
            "max_rel_err": self.max_rel_err,
            "tolerance": self.tolerance,
            "elapsed_s": self.elapsed_s,
            "checks": self.checks,
        }


def run_gradcheck(seeds=range(10), tolerance: float = TOLERANCE) -> GradcheckReport:
    """Run every loss x adapter finite-difference suite over the given seeds."""
    start = time.monotonic()
    checks = []
    overall = 0.0
    for seed in seeds:
        err = _adapter_unit_check(seed)
        checks.append({"seed": int(seed), "component": "adapter_forward",
                       "adapter": "standalone", "max_rel_err": float(err)})
        overall = max(overall, err)
        state, samples = _random_problem(seed)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0013]))
        plans = [
            ("nce", TrainConfig(seed=seed)),
            ("contact", TrainConfig(seed=seed, focal_theta=2.0)),
            ("contact_theta0", TrainConfig(seed=seed, focal_theta=0.0)),
            ("match", TrainConfig(seed=seed)),
            ("total", TrainConfig(seed=seed)),
        ]
        for label, config in plans:
            component = "contact" if label.startswith("contact") else label
            for adapter in TOUCHED[component]:
                err = _max_rel_err(state, samples, config, component, adapter, rng)
                checks.append({"seed": int(seed), "component": label,
                               "adapter": adapter, "max_rel_err": float(err)})
                overall = max(overall, err)
    return GradcheckReport(checks=checks, max_rel_err=float(overall),
                           tolerance=tolerance, elapsed_s=time.monotonic() - start)


def write_report(report: GradcheckReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
