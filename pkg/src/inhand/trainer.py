"""Joint end-to-end training of the alignment and interaction objectives.

Each batch runs the adapters once over all stacked inputs, builds the
contrastive score matrix, derives pseudo-labels from the matched-pair
similarities (as constants: no gradient flows through thresholding or
argmax), evaluates the head losses, and backpropagates the weighted total
through every adapter. Shuffling, initialization, and updates are fully
deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import alignment, heads, pseudo_labels
from .bundles import SampleBundle
from .masks import mask_iou
from .numerics import (AdamState, AdapterGrads, adam_step, adapter_backward,
                       adapter_forward, sigmoid)
from .pseudo_labels import HAND_ORDER
from .state import ADAPTER_NAMES, ModelState, init_model_state, save_checkpoint
from .validation import ValidationError


def _masked_softmax_columns(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Column softmax restricted to valid rows; invalid entries stay exactly zero."""
    probs = np.zeros_like(logits)
    for col in range(logits.shape[1]):
        sel = valid[:, col]
        if not sel.any():
            continue
        z = logits[sel, col]
        e = np.exp(z - z.max())
        probs[sel, col] = e / e.sum()
    return probs

COMPONENTS = ("nce", "contact", "match")


@dataclass
class TrainConfig:
    """Hyperparameters and ablation switches for a training run."""

    lambda_nce: float = 0.2
    lambda_match: float = 0.1
    lambda_contact: float = 1.0
    gamma: float = 0.3
    focal_theta: float = 2.0
    lr: float = 4e-6
    epochs: int = 15
    batch_size: int = 64
    tau: float = 0.07
    seed: int = 0
    enable_nce: bool = True
    enable_contact: bool = True
    enable_match: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.focal_theta < 0:
            raise ValidationError(f"focal_theta must be >= 0, got {self.focal_theta}")
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        for name in ("lambda_nce", "lambda_match", "lambda_contact"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown training config fields: {sorted(unknown)}")
        return TrainConfig(**doc)


def total_loss(components: dict[str, float], config: TrainConfig) -> float:
    """Weighted sum of enabled loss components."""
    total = 0.0
    if config.enable_nce:
        total += config.lambda_nce * components.get("nce", 0.0)
    if config.enable_match:
        total += config.lambda_match * components.get("match", 0.0)
    if config.enable_contact:
        total += config.lambda_contact * components.get("contact", 0.0)
    return total


@dataclass
class PreparedSample:
    """Bundle contents unpacked into arrays, plus precomputed mask overlaps."""

    id: str
    v: np.ndarray                       # (N, D) raw object embeddings
    p: np.ndarray                       # (2M, D) raw phrase embeddings
    num_phrases: int
    hand_sides: list[str]               # present sides, left-to-right order
    h: np.ndarray                       # (K, D) raw hand embeddings
    ious2: np.ndarray                   # (N, 2) object-hand mask IoU, 0 if absent
    hands_present: dict[str, bool]
    gt_targets: dict[str, int | None] = field(default_factory=dict)

    @property
    def n_objects(self) -> int:
        return self.v.shape[0]

    @property
    def usable(self) -> bool:
        """Contributes to alignment and pseudo-labels: needs objects and phrases."""
        return self.n_objects > 0 and self.num_phrases > 0

    def valid_columns(self) -> np.ndarray:
        """(N, K) validity restricted to the present hands' columns."""
        cols = [HAND_ORDER.index(s) for s in self.hand_sides]
        present = np.array([True] * len(cols), dtype=bool)
        return (self.ious2[:, cols] > 0.0) & present[None, :]


def prepare_sample(bundle: SampleBundle, d_v: int) -> PreparedSample:
    n = len(bundle.objects)
    v = (np.stack([o.embedding for o in bundle.objects]) if n else np.zeros((0, d_v)))
    m = len(bundle.phrases)
    p = (np.stack([ph.emb_left for ph in bundle.phrases]
                  + [ph.emb_right for ph in bundle.phrases]) if m else np.zeros((0, d_v)))
    sides = [h.side for h in bundle.hands]
    sides.sort(key=HAND_ORDER.index)
    h = (np.stack([bundle.hand(s).embedding for s in sides]) if sides else np.zeros((0, d_v)))
    ious2 = np.zeros((n, 2))
    for k, side in enumerate(HAND_ORDER):
        hand = bundle.hand(side)
        if hand is None:
            continue
        for i, obj in enumerate(bundle.objects):
            ious2[i, k] = mask_iou(obj.mask, hand.mask)
    gt_targets: dict[str, int | None] = {}
    if bundle.gt is not None:
        for side in HAND_ORDER:
            gt_mask = bundle.gt.for_side(side) or bundle.gt.both
            target = None
            if gt_mask is not None and gt_mask.area > 0 and n > 0:
                overlaps = [mask_iou(o.mask, gt_mask) for o in bundle.objects]
                best = int(np.argmax(overlaps))
                if overlaps[best] > 0:
                    target = best
            gt_targets[side] = target
    return PreparedSample(
        id=bundle.id, v=v, p=p, num_phrases=m, hand_sides=sides, h=h,
        ious2=ious2, hands_present={s: s in sides for s in HAND_ORDER},
        gt_targets=gt_targets,
    )


@dataclass
class BatchResult:
    losses: dict[str, float]
    grads: dict[str, dict[str, AdapterGrads]] | None
    labels: dict[str, pseudo_labels.PseudoLabels]
    pos_count: int = 0
    valid_count: int = 0
    match_correct: int = 0
    match_counted: int = 0

    def total(self, config: TrainConfig) -> float:
        return total_loss(self.losses, config)

    def combined_grads(self, config: TrainConfig) -> dict[str, AdapterGrads]:
        weights = {"nce": config.lambda_nce if config.enable_nce else 0.0,
                   "contact": config.lambda_contact if config.enable_contact else 0.0,
                   "match": config.lambda_match if config.enable_match else 0.0}
        out = {}
        for adapter in ADAPTER_NAMES:
            acc = None
            for comp, per_adapter in self.grads.items():
                if adapter not in per_adapter or weights[comp] == 0.0:
                    continue
                term = AdapterGrads(*(weights[comp] * g for g in (
                    per_adapter[adapter].w1, per_adapter[adapter].b1,
                    per_adapter[adapter].w2, per_adapter[adapter].b2)))
                acc = term if acc is None else acc.add_(term)
            if acc is not None:
                out[adapter] = acc
        return out


def compute_batch(state: ModelState, samples: list[PreparedSample],
                  config: TrainConfig, want_grads: bool = True) -> BatchResult:
    """Forward (and optionally backward) pass over one batch.

    Loss values are reported unweighted per component; gradients are returned
    per component per adapter so callers can weight and combine them.
    """
    if not samples:
        raise ValidationError("empty batch")
    batch_n = len(samples)
    visual = state.adapters["visual"]
    textual = state.adapters["textual"]

    obj_rows = [s.v for s in samples]
    hand_rows = [s.h for s in samples]
    phr_rows = [s.p for s in samples]
    v_all = np.concatenate(obj_rows) if any(len(r) for r in obj_rows) else np.zeros((0, state.d_v))
    h_all = np.concatenate(hand_rows) if any(len(r) for r in hand_rows) else np.zeros((0, state.d_v))
    p_all = np.concatenate(phr_rows) if any(len(r) for r in phr_rows) else np.zeros((0, state.d_v))
    w_all = adapter_forward(visual, v_all) if len(v_all) else v_all
    hs_all = adapter_forward(visual, h_all) if len(h_all) else h_all
    q_all = adapter_forward(textual, p_all) if len(p_all) else p_all

    obj_off = np.concatenate(([0], np.cumsum([len(r) for r in obj_rows]))).astype(int)
    hand_off = np.concatenate(([0], np.cumsum([len(r) for r in hand_rows]))).astype(int)
    phr_off = np.concatenate(([0], np.cumsum([len(r) for r in phr_rows]))).astype(int)

    def w_of(i):
        return w_all[obj_off[i]:obj_off[i + 1]]

    def hs_of(i):
        return hs_all[hand_off[i]:hand_off[i + 1]]

    def q_of(i):
        return q_all[phr_off[i]:phr_off[i + 1]]

    losses = {"nce": 0.0, "contact": 0.0, "match": 0.0}
    d_w = {c: np.zeros_like(w_all) for c in COMPONENTS}
    d_hs = {c: np.zeros_like(hs_all) for c in COMPONENTS}
    d_q = {c: np.zeros_like(q_all) for c in COMPONENTS}

    usable = [i for i, s in enumerate(samples) if s.usable]

    # Stage 1: symmetric InfoNCE over the usable subset of the batch.
    if config.enable_nce and usable:
        s_mat, cache = alignment.batch_scores(
            [w_of(i) for i in usable], [q_of(i) for i in usable])
        loss_nce, d_s = alignment.nce_loss(s_mat, config.tau)
        losses["nce"] = loss_nce
        if want_grads:
            dw_stack, dq_stack = alignment.batch_scores_backward(cache, d_s)
            ro = 0
            co = 0
            for i in usable:
                n_i = samples[i].n_objects
                m2_i = 2 * samples[i].num_phrases
                d_w["nce"][obj_off[i]:obj_off[i] + n_i] += dw_stack[ro:ro + n_i]
                d_q["nce"][phr_off[i]:phr_off[i] + m2_i] += dq_stack[co:co + m2_i]
                ro += n_i
                co += m2_i

    # Pseudo-labels from the matched-pair similarities (constants: no gradient).
    label_map: dict[str, pseudo_labels.PseudoLabels] = {}
    condensed: dict[int, pseudo_labels.CondensedScores] = {}
    pool = []
    for i in usable:
        a_b = alignment.similarity_matrix(w_of(i), q_of(i))
        cs = pseudo_labels.condense_scores(
            a_b, samples[i].num_phrases, samples[i].ious2, samples[i].hands_present)
        condensed[i] = cs
        pool.append(cs.valid_values())
    pos_count = 0
    valid_count = 0
    match_correct = 0
    match_counted = 0
    if condensed:
        pooled = np.concatenate(pool) if pool else np.zeros(0)
        rho = pseudo_labels.percentile_threshold(pooled, config.gamma) if pooled.size else None
        for i, cs in condensed.items():
            contact = (pseudo_labels.contact_pseudo_labels(cs, rho)
                       if rho is not None else np.zeros_like(cs.values, dtype=np.int8))
            match = pseudo_labels.matching_pseudo_labels(cs)
            label_map[samples[i].id] = pseudo_labels.PseudoLabels(contact=contact, match=match)
            pos_count += int(contact.sum())
            valid_count += int(cs.valid.sum())
            for side in HAND_ORDER:
                target = samples[i].gt_targets.get(side)
                if target is None:
                    continue
                match_counted += 1
                if match.get(side) == target:
                    match_correct += 1

    # Stage 2: contactness and matching heads over present hands.
    head_grads: dict[str, AdapterGrads] = {}
    head_plan = []
    if label_map and len(w_all):
        if config.enable_contact:
            head_plan.append(("contact", "contact"))
        if config.enable_match:
            head_plan.append(("match", "match"))
    for comp, adapter_name in head_plan:
        params = state.adapters[adapter_name]
        u_all = adapter_forward(params, w_all)
        z_all = adapter_forward(params, hs_all) if len(hs_all) else hs_all
        d_u = np.zeros_like(u_all)
        d_z = np.zeros_like(z_all)
        for i in usable:
            sample = samples[i]
            labels = label_map.get(sample.id)
            if labels is None or not sample.hand_sides or sample.n_objects == 0:
                continue
            cols = [HAND_ORDER.index(s) for s in sample.hand_sides]
            valid_k = sample.valid_columns()
            osl = slice(obj_off[i], obj_off[i + 1])
            hsl = slice(hand_off[i], hand_off[i + 1])
            u_b = u_all[osl]
            z_b = z_all[hsl]
            logits_b = u_b @ z_b.T
            if comp == "contact":
                q_b = sigmoid(logits_b)
                loss_b, d_logits = heads.focal_contact_loss(
                    q_b, labels.contact[:, cols], valid_k, config.focal_theta)
            else:
                probs = _masked_softmax_columns(logits_b, valid_k)
                loss_b, d_logits = heads.matching_loss(
                    probs, sample.hand_sides, labels.match)
            losses[comp] += loss_b / batch_n
            if want_grads:
                d_u[osl] += (d_logits @ z_b) / batch_n
                d_z[hsl] += (d_logits.T @ u_b) / batch_n
        if want_grads:
            x_stack = np.concatenate([w_all, hs_all]) if len(hs_all) else w_all
            up_stack = np.concatenate([d_u, d_z]) if len(hs_all) else d_u
            g_head, d_in = adapter_backward(params, x_stack, up_stack)
            head_grads[comp] = g_head
            d_w[comp] += d_in[:len(w_all)]
            if len(hs_all):
                d_hs[comp] += d_in[len(w_all):]

    grads = None
    if want_grads:
        grads = {c: {} for c in COMPONENTS}
        if "contact" in head_grads:
            grads["contact"]["contact"] = head_grads["contact"]
        if "match" in head_grads:
            grads["match"]["match"] = head_grads["match"]
        for comp in COMPONENTS:
            if np.any(d_w[comp]) or np.any(d_hs[comp]):
                x_stack = np.concatenate([v_all, h_all]) if len(h_all) else v_all
                up_stack = (np.concatenate([d_w[comp], d_hs[comp]])
                            if len(h_all) else d_w[comp])
                g_vis, _ = adapter_backward(visual, x_stack, up_stack)
                grads[comp]["visual"] = g_vis
            if np.any(d_q[comp]):
                g_txt, _ = adapter_backward(textual, p_all, d_q[comp])
                grads[comp]["textual"] = g_txt

    return BatchResult(
        losses=losses, grads=grads, labels=label_map,
        pos_count=pos_count, valid_count=valid_count,
        match_correct=match_correct, match_counted=match_counted,
    )


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        self.epochs.append(record)

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def train(bundles: list[SampleBundle], config: TrainConfig,
          checkpoint_path: str | None = None, quiet: bool = True
          ) -> tuple[ModelState, TrainLog]:
    """Run the full optimization; returns the trained state and per-epoch log."""
    if not bundles:
        raise ValidationError("empty dataset")
    dims = {b.embedding_dim for b in bundles if b.embedding_dim is not None}
    if len(dims) > 1:
        raise ValidationError(f"mixed embedding dimensions in dataset: {sorted(dims)}")
    if not dims:
        raise ValidationError("dataset carries no embeddings")
    d_v = dims.pop()
    prepared = [prepare_sample(b, d_v) for b in bundles]
    if not any(s.usable for s in prepared):
        raise ValidationError("no usable samples (need at least one with objects and phrases)")

    state = init_model_state(d_v, tau=config.tau, seed=config.seed,
                             hyperparams=config.to_dict())
    optimizer = {name: AdamState.for_params(params, lr=config.lr)
                 for name, params in state.adapters.items()}
    log = TrainLog()

    for epoch in range(config.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xEB0C, epoch]))
        order = rng.permutation(len(prepared))
        sums = {"nce": 0.0, "contact": 0.0, "match": 0.0, "total": 0.0}
        pos = valid = correct = counted = 0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[start:start + config.batch_size]]
            result = compute_batch(state, batch, config, want_grads=True)
            batch_total = result.total(config)
            if not np.isfinite(batch_total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {n_batches}: "
                    f"{result.losses}")
            for name, grad in result.combined_grads(config).items():
                adam_step(optimizer[name], state.adapters[name], grad)
            for key in ("nce", "contact", "match"):
                sums[key] += result.losses[key]
            sums["total"] += batch_total
            pos += result.pos_count
            valid += result.valid_count
            correct += result.match_correct
            counted += result.match_counted
            n_batches += 1
        record = {
            "epoch": epoch,
            "loss_nce": sums["nce"] / n_batches,
            "loss_contact": sums["contact"] / n_batches,
            "loss_match": sums["match"] / n_batches,
            "loss_total": sums["total"] / n_batches,
            "pseudo_label_pos_rate": (pos / valid) if valid else None,
            "pseudo_match_accuracy": (correct / counted) if counted else None,
        }
        log.append(record)
        if not quiet:
            print(f"epoch {epoch}: total={record['loss_total']:.6f} "
                  f"nce={record['loss_nce']:.6f} contact={record['loss_contact']:.6f} "
                  f"match={record['loss_match']:.6f}")

    state.optimizer = optimizer
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return state, log
