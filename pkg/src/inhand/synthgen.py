"""Deterministic synthetic scenes with planted hand-object-phrase associations.

Every scene draws unit-norm object embeddings, picks an interaction type
(left / right / both hands / none), and plants the association: the chosen
phrase's hand-specific embedding and the interacting hand's embedding are
both noisy copies of the target object's embedding. Rectangular masks are
laid out so each interacting hand overlaps its target (hard constraint) and
occasionally a distractor. Ground-truth masks record the planted target, so
the whole pipeline can be scored against construction.

Four optional difficulty knobs (inert at their defaults) support stress
benchmarks: `hand_alignment` weakens the visual shortcut from hand to target
embedding, `text_bias` shifts every planted phrase embedding along one
dataset-constant direction so the raw text space starts misaligned,
`grip_signal` gives gripping vs idle hands opposite components along a
dataset-constant appearance direction (contact is visible in the hand crop),
and `nuisance` mixes a dataset-fixed subspace of distractor coordinates into
object and hand embeddings, corrupting raw dot products until a model learns
to project the subspace away. Text embeddings always describe the clean core
identity, so narration supervision carries information raw visual similarity
lacks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .bundles import (GroundTruth, HandEntry, ObjectProposal, PhraseEntry,
                      SampleBundle, save_bundles)
from .masks import mask_iou, rect_mask
from .numerics import cosine_similarity
from .pseudo_labels import HAND_ORDER
from .validation import ValidationError

NOUNS = (
    "cup", "knife", "sponge", "bottle", "pan", "spoon", "plate", "jar",
    "towel", "board", "lid", "bowl", "whisk", "grater", "peeler", "mug",
)

VERBS = ("picks up", "holds", "grabs", "lifts", "moves")


@dataclass
class SynthConfig:
    num_samples: int = 2500
    d_v: int = 32
    objects_min: int = 3
    objects_max: int = 6
    phrases_min: int = 2
    phrases_max: int = 4
    sigma: float = 0.05
    grid: int = 48
    frac_left: float = 0.4
    frac_right: float = 0.4
    frac_both: float = 0.15
    p_distractor: float = 0.3
    hand_alignment: float = 1.0
    text_bias: float = 0.0
    grip_signal: float = 0.0
    nuisance: float = 0.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValidationError("num_samples must be >= 1")
        if self.grid < 8:
            raise ValidationError(f"grid must be >= 8, got {self.grid}")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if not (1 <= self.objects_min <= self.objects_max):
            raise ValidationError("invalid objects range")
        if not (1 <= self.phrases_min <= self.phrases_max):
            raise ValidationError("invalid phrases range")
        total = self.frac_left + self.frac_right + self.frac_both
        if min(self.frac_left, self.frac_right, self.frac_both) < 0 or total > 1.0 + 1e-9:
            raise ValidationError("interaction fractions must be >= 0 and sum to <= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.grip_signal < 1.0:
            raise ValidationError("grip_signal must lie in [0, 1)")
        if not 0.0 <= self.nuisance < 1.0:
            raise ValidationError("nuisance must lie in [0, 1)")
        if self.nuisance > 0 and self.d_v < 4:
            raise ValidationError("nuisance needs d_v >= 4")
        budget = (self.hand_alignment ** 2 + self.grip_signal ** 2
                  + self.hand_nuisance ** 2)
        if budget > 1.0 + 1e-9:
            raise ValidationError(
                "hand_alignment^2 + grip_signal^2 + hand nuisance^2 must be <= 1")

    @property
    def hand_nuisance(self) -> float:
        """Nuisance weight mixed into hand embeddings (fraction of `nuisance`)."""
        return 0.7 * self.nuisance

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "SynthConfig":
        known = {f.name for f in fields(SynthConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown synth config fields: {sorted(unknown)}")
        return SynthConfig(**doc)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValidationError("degenerate zero vector while planting embeddings")
    return vec / norm


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    return _unit(rng.standard_normal(dim))


class _Embedder:
    """Dataset-level embedding directions and the planting formulas.

    With nuisance = 0 the core space is the full space and the construction
    reduces to: objects are random unit vectors, planted texts and hands are
    noisy copies of the target object embedding.
    """

    def __init__(self, config: SynthConfig):
        self.config = config
        d = config.d_v
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD12EC7]))
        self.bias = _random_unit(rng, d)
        if config.nuisance > 0:
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            d_s = d // 2
            self.s_basis = q[:, :d_s]          # nuisance coordinates
            self.c_basis = q[:, d_s:]          # identity-carrying core
        else:
            self.s_basis = None
            self.c_basis = np.eye(d)
        self.grip = self.c_basis @ _random_unit(rng, self.c_basis.shape[1])

    def _core_unit(self, rng) -> np.ndarray:
        return self.c_basis @ _random_unit(rng, self.c_basis.shape[1])

    def _nuisance_unit(self, rng) -> np.ndarray:
        return self.s_basis @ _random_unit(rng, self.s_basis.shape[1])

    def object_vec(self, rng) -> tuple[np.ndarray, np.ndarray]:
        """Returns (stored embedding, clean core identity)."""
        core = self._core_unit(rng)
        eta = self.config.nuisance
        if eta == 0:
            return core, core
        mixed = np.sqrt(1.0 - eta * eta) * core + eta * self._nuisance_unit(rng)
        return _unit(mixed), core

    def planted_text(self, core_target, rng) -> np.ndarray:
        cfg = self.config
        noisy = (core_target + cfg.text_bias * self.bias
                 + cfg.sigma * rng.standard_normal(cfg.d_v))
        return _unit(noisy)

    def contact_hand(self, core_target, rng) -> np.ndarray:
        cfg = self.config
        parts = cfg.hand_alignment * core_target + cfg.grip_signal * self.grip
        if cfg.nuisance > 0:
            parts = parts + cfg.hand_nuisance * self._nuisance_unit(rng)
        residual = np.sqrt(max(0.0, 1.0 - cfg.hand_alignment ** 2
                               - cfg.grip_signal ** 2 - cfg.hand_nuisance ** 2))
        parts = parts + residual * _random_unit(rng, cfg.d_v)
        return _unit(parts + cfg.sigma * rng.standard_normal(cfg.d_v))

    def idle_hand(self, rng) -> np.ndarray:
        cfg = self.config
        parts = -cfg.grip_signal * self.grip
        if cfg.nuisance > 0:
            parts = parts + cfg.hand_nuisance * self._nuisance_unit(rng)
        residual = np.sqrt(max(0.0, 1.0 - cfg.grip_signal ** 2 - cfg.hand_nuisance ** 2))
        parts = parts + residual * _random_unit(rng, cfg.d_v)
        return _unit(parts + cfg.sigma * rng.standard_normal(cfg.d_v))


def _rect_dims(rng, grid):
    lo = max(2, grid // 6)
    hi = max(lo + 1, grid // 3)
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


def _place_anywhere(rng, grid, w, h):
    x0 = int(rng.integers(0, grid - w + 1))
    y0 = int(rng.integers(0, grid - h + 1))
    return x0, y0, x0 + w, y0 + h


def _place_covering(rng, grid, w, h, px, py):
    """Position a w x h rect so that pixel (px, py) lies inside it."""
    x0 = min(max(px - int(rng.integers(0, w)), 0), grid - w)
    y0 = min(max(py - int(rng.integers(0, h)), 0), grid - h)
    return x0, y0, x0 + w, y0 + h


def _rects_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _pixel_inside(rng, rect):
    return (int(rng.integers(rect[0], rect[2])), int(rng.integers(rect[1], rect[3])))


def _interaction_type(rng, config: SynthConfig) -> str:
    u = rng.random()
    if u < config.frac_left:
        return "left"
    if u < config.frac_left + config.frac_right:
        return "right"
    if u < config.frac_left + config.frac_right + config.frac_both:
        return "both"
    return "none"


def generate_scene(config: SynthConfig, index: int) -> SampleBundle:
    """Build one scene; fully determined by (config.seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5CE0E, index]))
    grid = config.grid
    d = config.d_v
    embedder = _Embedder(config)

    n = int(rng.integers(config.objects_min, config.objects_max + 1))
    m = int(rng.integers(config.phrases_min, config.phrases_max + 1))
    drawn = [embedder.object_vec(rng) for _ in range(n)]
    v = np.stack([vec for vec, _ in drawn])
    cores = [core for _, core in drawn]
    kind = _interaction_type(rng, config)
    targets: dict[str, int] = {}
    if kind in ("left", "right"):
        targets[kind] = int(rng.integers(n))
    elif kind == "both":
        shared = int(rng.integers(n))
        targets = {"left": shared, "right": shared}

    nouns = list(rng.choice(len(NOUNS), size=min(m, len(NOUNS)), replace=False))
    while len(nouns) < m:
        nouns.append(int(rng.integers(len(NOUNS))))
    phrase_texts = [NOUNS[i] for i in nouns]
    target_phrase = int(rng.integers(m))

    emb_left = [_random_unit(rng, d) for _ in range(m)]
    emb_right = [_random_unit(rng, d) for _ in range(m)]
    for side, t in targets.items():
        planted = embedder.planted_text(cores[t], rng)
        if side == "left":
            emb_left[target_phrase] = planted
        else:
            emb_right[target_phrase] = planted

    hand_embs = {}
    for side in HAND_ORDER:
        if side in targets:
            hand_embs[side] = embedder.contact_hand(cores[targets[side]], rng)
        else:
            hand_embs[side] = embedder.idle_hand(rng)

    # Geometry: objects first, then hands (interacting hands must overlap
    # their target), then optional forced distractor overlaps.
    obj_rects = []
    for _ in range(n):
        w, h = _rect_dims(rng, grid)
        obj_rects.append(_place_anywhere(rng, grid, w, h))
    hand_rects = {}
    for side in HAND_ORDER:
        w, h = _rect_dims(rng, grid)
        if side in targets:
            px, py = _pixel_inside(rng, obj_rects[targets[side]])
            hand_rects[side] = _place_covering(rng, grid, w, h, px, py)
        else:
            rect = None
            for _ in range(200):
                cand = _place_anywhere(rng, grid, w, h)
                if not any(_rects_overlap(cand, r) for r in obj_rects):
                    rect = cand
                    break
            hand_rects[side] = rect if rect is not None else _place_anywhere(rng, grid, w, h)
    target_set = set(targets.values())
    movable = [i for i in range(n) if i not in target_set]
    for side in HAND_ORDER:
        if movable and rng.random() < config.p_distractor:
            pick = movable[int(rng.integers(len(movable)))]
            w = obj_rects[pick][2] - obj_rects[pick][0]
            h = obj_rects[pick][3] - obj_rects[pick][1]
            px, py = _pixel_inside(rng, hand_rects[side])
            obj_rects[pick] = _place_covering(rng, grid, w, h, px, py)

    obj_masks = [rect_mask(grid, grid, *rect) for rect in obj_rects]
    hand_masks = {side: rect_mask(grid, grid, *rect) for side, rect in hand_rects.items()}
    for side, t in targets.items():
        if mask_iou(obj_masks[t], hand_masks[side]) <= 0.0:
            raise ValidationError(
                f"scene {index}: planted hand-{side} mask misses its target")

    objects = [ObjectProposal(mask=obj_masks[i], embedding=v[i]) for i in range(n)]
    hands = [HandEntry(side=side, mask=hand_masks[side], embedding=hand_embs[side])
             for side in HAND_ORDER]
    phrases = [PhraseEntry(text=phrase_texts[j], emb_left=emb_left[j],
                           emb_right=emb_right[j]) for j in range(m)]
    gt = GroundTruth()
    if kind == "both":
        gt.both = obj_masks[targets["left"]]
    elif kind in ("left", "right"):
        setattr(gt, kind, obj_masks[targets[kind]])

    verb = VERBS[int(rng.integers(len(VERBS)))]
    if kind == "none":
        narration = "the wearer reaches across the counter"
    elif kind == "both":
        narration = f"the wearer {verb} the {phrase_texts[target_phrase]} with both hands"
    else:
        narration = f"the wearer {verb} the {phrase_texts[target_phrase]} with the {kind} hand"

    return SampleBundle(
        id=f"scene-{config.seed}-{index:06d}", width=grid, height=grid,
        narration=narration, objects=objects, hands=hands, phrases=phrases, gt=gt,
    )


def generate_bundles(config: SynthConfig) -> list[SampleBundle]:
    return [generate_scene(config, i) for i in range(config.num_samples)]


def generate_dataset(config: SynthConfig, train_path: str, eval_path: str
                     ) -> tuple[int, int]:
    """Write disjoint train/eval bundle files; returns the line counts."""
    n_train = int(round(config.num_samples * config.train_fraction))
    n_train = min(max(n_train, 1), config.num_samples - 1) \
        if config.num_samples > 1 else config.num_samples
    bundles = generate_bundles(config)
    save_bundles(bundles[:n_train], train_path)
    save_bundles(bundles[n_train:], eval_path)
    return n_train, config.num_samples - n_train


def planted_target(bundle: SampleBundle, side: str) -> int | None:
    """Recover the planted object index for a hand from the GT masks."""
    if bundle.gt is None or not bundle.objects:
        return None
    gt_mask = bundle.gt.for_side(side) or bundle.gt.both
    if gt_mask is None or gt_mask.area == 0:
        return None
    overlaps = [mask_iou(o.mask, gt_mask) for o in bundle.objects]
    best = int(np.argmax(overlaps))
    return best if overlaps[best] > 0 else None


def oracle_matching_accuracy(bundles: list[SampleBundle]) -> float:
    """Brute-force nearest-neighbor recovery of planted targets.

    For every interacting hand, pick the raw object embedding with the highest
    cosine similarity to the raw hand embedding. Independent of any trained
    component; used as the upper-bound comparator for the trained model.
    """
    correct = 0
    counted = 0
    for bundle in bundles:
        for side in HAND_ORDER:
            target = planted_target(bundle, side)
            hand = bundle.hand(side)
            if target is None or hand is None:
                continue
            sims = [cosine_similarity(o.embedding, hand.embedding) for o in bundle.objects]
            counted += 1
            if int(np.argmax(sims)) == target:
                correct += 1
    if counted == 0:
        raise ValidationError("no planted interactions found")
    return correct / counted


def write_config(config: SynthConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
