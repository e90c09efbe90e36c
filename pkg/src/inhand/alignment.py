"""Cross-modal alignment between object embeddings and hand-specific phrases.

A sample's N adapted object embeddings are scored against the 2M adapted
phrase embeddings (M left-hand rows first, then M right-hand rows) with
cosine similarity. Collapsing each phrase column to its best-matching
object and averaging yields one image-narration score; a symmetric
InfoNCE objective over the batch's score matrix aligns matched pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundles import SampleBundle
from .numerics import adapter_forward, normalize_rows, normalize_rows_backward
from .state import ModelState
from .validation import ValidationError, as_float_array


@dataclass
class AdaptedSample:
    """Adapter outputs for one bundle."""

    w: np.ndarray                      # (N, D) adapted object embeddings
    hands: dict[str, np.ndarray]       # side -> (D,) adapted hand embedding
    q: np.ndarray                      # (2M, D) adapted phrases, left block first


def adapt_embeddings(state: ModelState, bundle: SampleBundle) -> AdaptedSample:
    """Run objects and hands through the visual adapter, phrases through the textual one."""
    d = state.d_v
    visual = state.adapters["visual"]
    textual = state.adapters["textual"]
    if bundle.objects:
        w = adapter_forward(visual, np.stack([o.embedding for o in bundle.objects]))
    else:
        w = np.zeros((0, d))
    hands = {h.side: adapter_forward(visual, h.embedding) for h in bundle.hands}
    if bundle.phrases:
        raw = np.stack([p.emb_left for p in bundle.phrases]
                       + [p.emb_right for p in bundle.phrases])
        q = adapter_forward(textual, raw)
    else:
        q = np.zeros((0, d))
    return AdaptedSample(w=w, hands=hands, q=q)


def similarity_matrix(w: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities, objects as rows, phrases as columns."""
    w = as_float_array(w, "object embeddings")
    q = as_float_array(q, "phrase embeddings")
    w_unit, _ = normalize_rows(w)
    q_unit, _ = normalize_rows(q)
    return w_unit @ q_unit.T


def best_match_scores(a: np.ndarray) -> np.ndarray:
    """Column-wise max: the strongest object match per phrase."""
    a = as_float_array(a, "similarity matrix")
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValidationError("similarity matrix needs at least one object row")
    return a.max(axis=0)


def image_narration_score(a: np.ndarray) -> float:
    """Mean of best-match scores over all phrase columns."""
    a = as_float_array(a, "similarity matrix")
    if a.ndim != 2 or a.shape[1] == 0:
        raise ValidationError("similarity matrix needs at least one phrase column")
    return float(best_match_scores(a).mean())


def nce_loss(s: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over a square score matrix with matched pairs on the diagonal.

    Returns the loss and its exact gradient with respect to S.
    """
    s = as_float_array(s, "score matrix")
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
        raise ValidationError(f"score matrix must be square and non-empty, got {s.shape}")
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    n = s.shape[0]
    logits = s / tau
    row_ls = logits - _logsumexp(logits, axis=1)
    col_ls = logits - _logsumexp(logits, axis=0)
    loss = -(np.trace(row_ls) + np.trace(col_ls)) / n
    eye = np.eye(n)
    grad = (np.exp(row_ls) - eye) / (n * tau) + (np.exp(col_ls) - eye) / (n * tau)
    return float(loss), grad


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))


@dataclass
class BatchScoreCache:
    """Intermediates of batch_scores needed for the exact backward pass."""

    w_unit: np.ndarray
    w_norms: np.ndarray
    q_unit: np.ndarray
    q_norms: np.ndarray
    row_offsets: np.ndarray     # per sample, start row in the stacked object matrix
    row_counts: np.ndarray
    col_offsets: np.ndarray     # per sample, start row in the stacked phrase matrix
    col_counts: np.ndarray
    winners: np.ndarray         # (n_samples, total_cols) local argmax row per column
    sims: np.ndarray            # (total_rows, total_cols) all-pairs cosines


def batch_scores(w_list: list[np.ndarray], q_list: list[np.ndarray]
                 ) -> tuple[np.ndarray, BatchScoreCache]:
    """All-pairs image-narration scores S[g, h] for a batch.

    w_list[g] is sample g's (N_g, D) adapted objects, q_list[h] its (2M_h, D)
    adapted phrases; every N_g and 2M_h must be >= 1.
    """
    if len(w_list) != len(q_list) or not w_list:
        raise ValidationError("batch_scores needs matching non-empty object/phrase lists")
    for g, (w, q) in enumerate(zip(w_list, q_list)):
        if len(w) == 0:
            raise ValidationError(f"sample {g} has no objects")
        if len(q) == 0:
            raise ValidationError(f"sample {g} has no phrases")
    n_samples = len(w_list)
    w_all = np.concatenate(w_list, axis=0)
    q_all = np.concatenate(q_list, axis=0)
    w_unit, w_norms = normalize_rows(w_all)
    q_unit, q_norms = normalize_rows(q_all)
    sims = w_unit @ q_unit.T
    row_counts = np.array([len(w) for w in w_list])
    col_counts = np.array([len(q) for q in q_list])
    row_offsets = np.concatenate(([0], np.cumsum(row_counts))).astype(int)
    col_offsets = np.concatenate(([0], np.cumsum(col_counts))).astype(int)
    total_cols = sims.shape[1]
    winners = np.zeros((n_samples, total_cols), dtype=np.int64)
    col_max = np.zeros((n_samples, total_cols))
    for g in range(n_samples):
        block = sims[row_offsets[g]:row_offsets[g + 1]]
        winners[g] = block.argmax(axis=0)
        col_max[g] = block[winners[g], np.arange(total_cols)]
    # S[g, h] = mean over sample h's columns of sample g's column maxima
    sums = np.add.reduceat(col_max, col_offsets[:-1], axis=1)
    s = sums / col_counts[None, :]
    cache = BatchScoreCache(
        w_unit=w_unit, w_norms=w_norms, q_unit=q_unit, q_norms=q_norms,
        row_offsets=row_offsets, row_counts=row_counts,
        col_offsets=col_offsets, col_counts=col_counts,
        winners=winners, sims=sims,
    )
    return s, cache


def batch_scores_backward(cache: BatchScoreCache, d_s: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Backward of batch_scores: gradients w.r.t. the stacked raw w and q rows.

    The max over objects routes gradient to the argmax winner only (exact
    almost everywhere; ties take the lowest row index).
    """
    n_samples = len(cache.row_counts)
    total_cols = cache.sims.shape[1]
    col_sample = np.repeat(np.arange(n_samples), cache.col_counts)
    inv_cols = 1.0 / cache.col_counts[col_sample]          # 1 / (2M_h) per column
    d_sims = np.zeros_like(cache.sims)
    cols = np.arange(total_cols)
    for g in range(n_samples):
        coef = d_s[g, col_sample] * inv_cols
        np.add.at(d_sims, (cache.row_offsets[g] + cache.winners[g], cols), coef)
    d_w_unit = d_sims @ cache.q_unit
    d_q_unit = d_sims.T @ cache.w_unit
    d_w = normalize_rows_backward(cache.w_unit, cache.w_norms, d_w_unit)
    d_q = normalize_rows_backward(cache.q_unit, cache.q_norms, d_q_unit)
    return d_w, d_q


def diag_similarity(cache: BatchScoreCache, g: int) -> np.ndarray:
    """Sample g's own object-phrase similarity block (the matched pair)."""
    rows = slice(cache.row_offsets[g], cache.row_offsets[g + 1])
    cols = slice(cache.col_offsets[g], cache.col_offsets[g + 1])
    return cache.sims[rows, cols]
