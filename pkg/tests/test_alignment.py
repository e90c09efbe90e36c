"""Stage-1 alignment: similarity matrices, best-match pooling, InfoNCE."""

import numpy as np
import pytest

from inhand.alignment import (adapt_embeddings, batch_scores,
                              batch_scores_backward, best_match_scores,
                              image_narration_score, nce_loss,
                              similarity_matrix)
from inhand.bundles import HandEntry, ObjectProposal, PhraseEntry, SampleBundle
from inhand.masks import rect_mask
from inhand.validation import ValidationError

from conftest import identity_state, unit


def _bundle(rng, n=2, m=2, d=4):
    w = h = 8
    return SampleBundle(
        id="b0", width=w, height=h, narration="x",
        objects=[ObjectProposal(mask=rect_mask(w, h, 0, 0, 2, 2),
                                embedding=unit(rng.standard_normal(d)))
                 for _ in range(n)],
        hands=[HandEntry(side="right", mask=rect_mask(w, h, 4, 4, 7, 7),
                         embedding=unit(rng.standard_normal(d)))],
        phrases=[PhraseEntry(text="p", emb_left=unit(rng.standard_normal(d)),
                             emb_right=unit(rng.standard_normal(d)))
                 for _ in range(m)],
    )


class TestAdaptEmbeddings:
    def test_identity_adapters_pass_through(self, rng):
        bundle = _bundle(rng)
        state = identity_state(4)
        adapted = adapt_embeddings(state, bundle)
        np.testing.assert_array_equal(adapted.w[0], bundle.objects[0].embedding)
        np.testing.assert_array_equal(adapted.hands["right"],
                                      bundle.hand("right").embedding)
        np.testing.assert_array_equal(adapted.q[0], bundle.phrases[0].emb_left)
        # left block first, then right block
        np.testing.assert_array_equal(adapted.q[2], bundle.phrases[0].emb_right)

    def test_empty_objects_ok(self, rng):
        bundle = _bundle(rng, n=0)
        adapted = adapt_embeddings(identity_state(4), bundle)
        assert adapted.w.shape == (0, 4)

    def test_deterministic(self, rng):
        bundle = _bundle(rng)
        state = identity_state(4)
        a1 = adapt_embeddings(state, bundle)
        a2 = adapt_embeddings(state, bundle)
        np.testing.assert_array_equal(a1.q, a2.q)


class TestSimilarityMatrix:
    def test_identity_basis(self):
        e1, e2 = np.eye(2)
        a = similarity_matrix(np.stack([e1, e2]), np.stack([e1, e2]))
        np.testing.assert_allclose(a, np.eye(2), atol=1e-15)

    def test_antipodal(self):
        e1 = np.array([1.0, 0.0])
        a = similarity_matrix(np.stack([e1]), np.stack([e1, -e1]))
        np.testing.assert_allclose(a, [[1.0, -1.0]])

    def test_oblique(self):
        w = np.array([[1.0, 0.0], [1.0, 1.0]])
        q = np.array([[0.0, 1.0]])
        a = similarity_matrix(w, q)
        np.testing.assert_allclose(a, [[0.0], [0.70710678]], atol=1e-8)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValidationError):
            similarity_matrix(np.zeros((1, 2)), np.eye(2))

    def test_object_scale_invariance(self, rng):
        w = rng.standard_normal((3, 5))
        q = rng.standard_normal((4, 5))
        a1 = similarity_matrix(w, q)
        a2 = similarity_matrix(2.5 * w, q)
        assert np.max(np.abs(a1 - a2)) <= 1e-12


class TestBestMatch:
    def test_identity(self):
        np.testing.assert_array_equal(best_match_scores(np.eye(2)), [1.0, 1.0])

    def test_column_max(self):
        a = np.array([[0.2, 0.9], [0.5, 0.1]])
        np.testing.assert_array_equal(best_match_scores(a), [0.5, 0.9])

    def test_single_row(self):
        np.testing.assert_array_equal(best_match_scores(np.array([[0.3, 0.7]])),
                                      [0.3, 0.7])

    def test_no_objects_rejected(self):
        with pytest.raises(ValidationError):
            best_match_scores(np.zeros((0, 3)))

    def test_argmax_invariant_to_column_scaling(self, rng):
        a = rng.standard_normal((5, 4))
        scales = rng.uniform(0.5, 3.0, size=4)
        assert np.array_equal(a.argmax(axis=0), (a * scales).argmax(axis=0))


class TestImageNarrationScore:
    def test_perfect(self):
        assert image_narration_score(np.eye(2)) == pytest.approx(1.0)

    def test_mean_of_maxima(self):
        a = np.array([[0.2, 0.9], [0.5, 0.1]])
        assert image_narration_score(a) == pytest.approx(0.7)

    def test_constant_matrix(self):
        assert image_narration_score(np.full((3, 4), 0.25)) == pytest.approx(0.25)

    def test_no_phrases_rejected(self):
        with pytest.raises(ValidationError):
            image_narration_score(np.zeros((3, 0)))

    def test_permutation_invariance(self, rng):
        a = rng.standard_normal((6, 5))
        perm = rng.permutation(6)
        assert image_narration_score(a) == pytest.approx(
            image_narration_score(a[perm]), abs=1e-12)


class TestNceLoss:
    def test_single_pair_is_zero(self, rng):
        for _ in range(5):
            s = rng.standard_normal((1, 1))
            loss, grad = nce_loss(s, tau=rng.uniform(0.05, 2.0))
            assert loss == 0.0
            np.testing.assert_allclose(grad, [[0.0]], atol=1e-15)

    def test_identity_scores(self):
        loss, _ = nce_loss(np.eye(2), tau=1.0)
        assert loss == pytest.approx(2.0 * np.log(1.0 + np.exp(-1.0)), abs=1e-12)
        assert loss == pytest.approx(0.62652, abs=1e-5)

    def test_loss_nonnegative(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 6))
            loss, _ = nce_loss(rng.standard_normal((n, n)), tau=0.3)
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self, rng):
        s = rng.standard_normal((4, 4))
        tau = 0.5
        _, grad = nce_loss(s, tau)
        h = 1e-6
        for i in range(4):
            for j in range(4):
                s[i, j] += h
                fp = nce_loss(s, tau)[0]
                s[i, j] -= 2 * h
                fm = nce_loss(s, tau)[0]
                s[i, j] += h
                numeric = (fp - fm) / (2 * h)
                assert abs(grad[i, j] - numeric) <= 1e-4 * max(1.0, abs(numeric))

    def test_non_square_rejected(self):
        with pytest.raises(ValidationError):
            nce_loss(np.zeros((2, 3)), tau=1.0)


class TestBatchScores:
    def _lists(self, rng, counts_w=(2, 3), counts_q=(4, 2), d=5):
        w = [rng.standard_normal((n, d)) for n in counts_w]
        q = [rng.standard_normal((m, d)) for m in counts_q]
        return w, q

    def test_matches_direct_computation(self, rng):
        w_list, q_list = self._lists(rng)
        s, _ = batch_scores(w_list, q_list)
        for g in range(2):
            for h in range(2):
                expected = image_narration_score(
                    similarity_matrix(w_list[g], q_list[h]))
                assert s[g, h] == pytest.approx(expected, abs=1e-12)

    def test_object_permutation_leaves_scores(self, rng):
        w_list, q_list = self._lists(rng)
        s1, _ = batch_scores(w_list, q_list)
        w_perm = [w[::-1].copy() for w in w_list]
        s2, _ = batch_scores(w_perm, q_list)
        np.testing.assert_allclose(s1, s2, atol=1e-12)

    def test_backward_matches_finite_differences(self, rng):
        w_list, q_list = self._lists(rng)
        tau = 0.4

        def loss_of(wl, ql):
            s, _ = batch_scores(wl, ql)
            return nce_loss(s, tau)[0]

        s, cache = batch_scores(w_list, q_list)
        _, d_s = nce_loss(s, tau)
        d_w, d_q = batch_scores_backward(cache, d_s)
        h = 1e-6
        flat_idx = [(0, 1, 2), (1, 2, 4), (0, 0, 0)]
        for (which, row, col) in flat_idx:
            w_list[which][row, col] += h
            fp = loss_of(w_list, q_list)
            w_list[which][row, col] -= 2 * h
            fm = loss_of(w_list, q_list)
            w_list[which][row, col] += h
            numeric = (fp - fm) / (2 * h)
            offset = sum(len(w) for w in w_list[:which])
            assert abs(d_w[offset + row, col] - numeric) <= 1e-5 * max(1.0, abs(numeric))
        for (which, row, col) in [(0, 3, 1), (1, 0, 4)]:
            q_list[which][row, col] += h
            fp = loss_of(w_list, q_list)
            q_list[which][row, col] -= 2 * h
            fm = loss_of(w_list, q_list)
            q_list[which][row, col] += h
            numeric = (fp - fm) / (2 * h)
            offset = sum(len(q) for q in q_list[:which])
            assert abs(d_q[offset + row, col] - numeric) <= 1e-5 * max(1.0, abs(numeric))

    def test_empty_sample_rejected(self, rng):
        with pytest.raises(ValidationError):
            batch_scores([np.zeros((0, 3))], [rng.standard_normal((2, 3))])
