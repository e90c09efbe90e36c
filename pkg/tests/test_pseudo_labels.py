"""Pseudo-label derivation: condensed scores, percentile threshold, labels."""

import numpy as np
import pytest

from inhand.alignment import similarity_matrix
from inhand.pseudo_labels import (CondensedScores, condense_scores,
                                  contact_pseudo_labels,
                                  matching_pseudo_labels, percentile_threshold)
from inhand.synthgen import SynthConfig, generate_scene, planted_target
from inhand.trainer import prepare_sample
from inhand.validation import ValidationError


def _scores(values, valid=None):
    values = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.ones_like(values, dtype=bool)
    return CondensedScores(values=values, valid=np.asarray(valid, dtype=bool))


class TestCondense:
    def test_single_phrase_is_reshape(self):
        a = np.array([[0.1, 0.9], [0.4, 0.2]])  # columns: [left phrase, right phrase]
        ious = np.ones((2, 2))
        cs = condense_scores(a, 1, ious)
        np.testing.assert_array_equal(cs.values, a)

    def test_block_max(self):
        a = np.array([[0.1, 0.4, 0.3, 0.2]])  # M=2: left block [0.1,0.4], right [0.3,0.2]
        cs = condense_scores(a, 2, np.ones((1, 2)))
        np.testing.assert_array_equal(cs.values, [[0.4, 0.3]])

    def test_zero_iou_invalidates(self):
        a = np.array([[0.9, 0.9]])
        cs = condense_scores(a, 1, np.zeros((1, 2)))
        assert not cs.valid.any()

    def test_absent_hand_invalidates(self):
        a = np.array([[0.9, 0.9]])
        cs = condense_scores(a, 1, np.ones((1, 2)),
                             {"left": True, "right": False})
        np.testing.assert_array_equal(cs.valid, [[True, False]])

    def test_layout_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            condense_scores(np.zeros((1, 3)), 2, np.ones((1, 2)))


class TestPercentile:
    def test_nearest_rank_ten_values(self):
        values = np.arange(0.1, 1.05, 0.1)
        assert percentile_threshold(values, 0.3) == pytest.approx(0.3)

    def test_single_value(self):
        for gamma in (0.01, 0.5, 0.99):
            assert percentile_threshold(np.array([0.42]), gamma) == 0.42

    def test_all_equal_gives_no_strict_positives(self):
        values = np.full(7, 0.5)
        rho = percentile_threshold(values, 0.3)
        assert rho == 0.5
        assert not (values > rho).any()

    def test_unsorted_input(self):
        values = np.array([0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.4, 0.6, 0.8, 1.0])
        assert percentile_threshold(values, 0.3) == pytest.approx(0.3)

    def test_integer_rank_boundary(self):
        # gamma * n integral: rank must be exactly gamma * n despite float error
        values = np.arange(1.0, 21.0)
        assert percentile_threshold(values, 0.3) == 6.0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            percentile_threshold(np.array([]), 0.3)


class TestContactLabels:
    def test_strict_threshold(self):
        cs = _scores([[0.4, 0.3]])
        np.testing.assert_array_equal(contact_pseudo_labels(cs, 0.3), [[1, 0]])

    def test_all_invalid_all_zero(self):
        cs = _scores([[0.9, 0.9]], valid=[[False, False]])
        np.testing.assert_array_equal(contact_pseudo_labels(cs, 0.0), [[0, 0]])

    def test_threshold_above_max(self):
        cs = _scores([[0.4, 0.3], [0.2, 0.1]])
        assert not contact_pseudo_labels(cs, 0.5).any()


class TestMatchingLabels:
    def test_argmax(self):
        cs = _scores([[0.2, 0.0], [0.9, 0.0], [0.5, 0.0]])
        assert matching_pseudo_labels(cs)["left"] == 1

    def test_invalid_hand_absent(self):
        cs = _scores([[0.2, 0.9]], valid=[[True, False]])
        match = matching_pseudo_labels(cs)
        assert match["left"] == 0 and match["right"] is None

    def test_tie_breaks_low_index(self):
        cs = _scores([[0.5, 0.0], [0.5, 0.0]])
        assert matching_pseudo_labels(cs)["left"] == 0

    def test_respects_validity(self):
        cs = _scores([[0.9, 0.0], [0.2, 0.0]], valid=[[False, True], [True, True]])
        assert matching_pseudo_labels(cs)["left"] == 1


class TestBatchProperties:
    def test_positive_rate_bounded_by_gamma(self, rng):
        # distinct values: positives are exactly the count strictly above rho
        values = rng.standard_normal(200)
        rho = percentile_threshold(values, 0.3)
        frac = (values > rho).mean()
        assert frac <= 0.7 + 1e-9
        assert frac >= 0.7 - 1.0 / 200 - 1e-9

    def test_label_invariance_under_permutation(self, rng):
        values = rng.standard_normal((6, 2))
        valid = rng.random((6, 2)) < 0.8
        valid[0] = True
        cs = _scores(values, valid)
        labels = contact_pseudo_labels(cs, 0.1)
        match = matching_pseudo_labels(cs)
        perm = rng.permutation(6)
        cs_p = _scores(values[perm], valid[perm])
        labels_p = contact_pseudo_labels(cs_p, 0.1)
        np.testing.assert_array_equal(labels_p, labels[perm])
        inverse = {side: (int(np.where(perm == idx)[0][0]) if idx is not None else None)
                   for side, idx in match.items()}
        match_p = matching_pseudo_labels(cs_p)
        # permutation may reorder ties; with continuous values this is exact
        assert match_p == inverse


class TestPlantedRecovery:
    def test_zero_noise_exact_recovery(self):
        config = SynthConfig(num_samples=60, sigma=0.0, seed=11)
        hits = 0
        total = 0
        for i in range(60):
            bundle = generate_scene(config, i)
            prepared = prepare_sample(bundle, config.d_v)
            if not prepared.usable:
                continue
            a = similarity_matrix(prepared.v, prepared.p)
            cs = condense_scores(a, prepared.num_phrases, prepared.ious2,
                                 prepared.hands_present)
            match = matching_pseudo_labels(cs)
            for side in ("left", "right"):
                target = planted_target(bundle, side)
                if target is None:
                    continue
                total += 1
                if match[side] == target:
                    hits += 1
        assert total > 30
        assert hits == total
