"""Training loop: batching, determinism, label isolation, ablations."""

import numpy as np
import pytest

from inhand.state import init_model_state, save_checkpoint
from inhand.synthgen import SynthConfig, generate_bundles
from inhand.trainer import (TrainConfig, compute_batch, prepare_sample,
                            total_loss, train)
from inhand.validation import ValidationError

from conftest import identity_state


@pytest.fixture(scope="module")
def small_bundles():
    return generate_bundles(SynthConfig(num_samples=60, d_v=8, grid=16, seed=21))


class TestTotalLoss:
    def test_paper_weights(self):
        config = TrainConfig()
        assert total_loss({"nce": 1.0, "match": 1.0, "contact": 1.0}, config) \
            == pytest.approx(0.2 + 0.1 + 1.0)

    def test_zero_weights(self):
        config = TrainConfig(lambda_nce=0.0, lambda_match=0.0, lambda_contact=0.0)
        assert total_loss({"nce": 5.0, "match": 5.0, "contact": 5.0}, config) == 0.0

    def test_disabled_components_contribute_nothing(self):
        config = TrainConfig(enable_nce=False, enable_match=False)
        assert total_loss({"nce": 9.0, "match": 9.0, "contact": 2.0}, config) == 2.0


class TestTrainErrors:
    def test_empty_dataset(self):
        with pytest.raises(ValidationError, match="empty"):
            train([], TrainConfig(epochs=1))

    def test_no_usable_samples(self, small_bundles):
        stripped = []
        for b in small_bundles[:4]:
            b = type(b)(id=b.id, width=b.width, height=b.height,
                        narration=b.narration, objects=b.objects,
                        hands=b.hands, phrases=[], gt=b.gt)
            stripped.append(b)
        with pytest.raises(ValidationError, match="usable"):
            train(stripped, TrainConfig(epochs=1))


class TestDeterminism:
    def test_identical_seeds_bitwise_identical_checkpoints(self, small_bundles, tmp_path):
        payloads = []
        for run in range(2):
            config = TrainConfig(epochs=2, batch_size=16, seed=7)
            path = str(tmp_path / f"run{run}.json")
            train(small_bundles, config, checkpoint_path=path)
            payloads.append(open(path, "rb").read())
        assert payloads[0] == payloads[1]

    def test_different_seed_changes_checkpoint(self, small_bundles, tmp_path):
        paths = []
        for seed in (1, 2):
            config = TrainConfig(epochs=1, batch_size=16, seed=seed)
            path = str(tmp_path / f"seed{seed}.json")
            train(small_bundles, config, checkpoint_path=path)
            paths.append(open(path, "rb").read())
        assert paths[0] != paths[1]


class TestPseudoLabelIsolation:
    def test_head_perturbation_never_changes_labels(self, small_bundles, rng):
        config = TrainConfig()
        prepared = [prepare_sample(b, 8) for b in small_bundles[:16]]
        state = init_model_state(8, seed=3)
        before = compute_batch(state, prepared, config, want_grads=False)
        for adapter in ("contact", "match"):
            for tensor in state.adapters[adapter].tensors().values():
                tensor += rng.standard_normal(tensor.shape)
        after = compute_batch(state, prepared, config, want_grads=False)
        assert set(before.labels) == set(after.labels)
        for sample_id, labels in before.labels.items():
            np.testing.assert_array_equal(labels.contact, after.labels[sample_id].contact)
            assert labels.match == after.labels[sample_id].match

    def test_visual_perturbation_does_change_labels(self, small_bundles, rng):
        config = TrainConfig()
        prepared = [prepare_sample(b, 8) for b in small_bundles[:16]]
        state = init_model_state(8, seed=3)
        before = compute_batch(state, prepared, config, want_grads=False)
        for tensor in state.adapters["visual"].tensors().values():
            tensor += rng.standard_normal(tensor.shape)
        after = compute_batch(state, prepared, config, want_grads=False)
        diffs = sum(
            int(not np.array_equal(before.labels[i].contact, after.labels[i].contact)
                or before.labels[i].match != after.labels[i].match)
            for i in before.labels)
        assert diffs > 0


class TestAblationStructure:
    def test_nce_disabled_leaves_textual_adapter_untouched(self, small_bundles):
        config = TrainConfig(epochs=2, batch_size=16, seed=5, enable_nce=False)
        state, _ = train(small_bundles, config)
        fresh = init_model_state(8, tau=config.tau, seed=5,
                                 hyperparams=config.to_dict())
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(
                state.adapters["textual"].tensors()[name],
                fresh.adapters["textual"].tensors()[name])
        # heads were trained
        assert not np.array_equal(state.adapters["contact"].w1,
                                  fresh.adapters["contact"].w1)

    def test_heads_disabled_leave_head_adapters_untouched(self, small_bundles):
        config = TrainConfig(epochs=2, batch_size=16, seed=5,
                             enable_contact=False, enable_match=False)
        state, _ = train(small_bundles, config)
        fresh = init_model_state(8, tau=config.tau, seed=5)
        np.testing.assert_array_equal(state.adapters["contact"].w1,
                                      fresh.adapters["contact"].w1)
        np.testing.assert_array_equal(state.adapters["match"].w2,
                                      fresh.adapters["match"].w2)
        assert not np.array_equal(state.adapters["visual"].w1,
                                  fresh.adapters["visual"].w1)

    def test_pseudo_labels_still_produced_without_nce(self, small_bundles):
        config = TrainConfig(enable_nce=False)
        prepared = [prepare_sample(b, 8) for b in small_bundles[:16]]
        state = init_model_state(8, seed=0)
        result = compute_batch(state, prepared, config, want_grads=False)
        assert result.labels
        assert result.losses["nce"] == 0.0


class TestTrainingProgress:
    def test_loss_decreases_when_learning_is_active(self):
        bundles = generate_bundles(SynthConfig(
            num_samples=200, d_v=8, grid=16, sigma=0.2, seed=9,
            hand_alignment=0.7, text_bias=1.0, grip_signal=0.3))
        config = TrainConfig(lr=0.01, epochs=5, batch_size=32, seed=2)
        _, log = train(bundles, config)
        assert log.epochs[-1]["loss_total"] < log.epochs[0]["loss_total"]

    def test_losses_finite_and_logged(self, small_bundles):
        config = TrainConfig(epochs=2, batch_size=16, seed=7)
        _, log = train(small_bundles, config)
        assert len(log.epochs) == 2
        for rec in log.epochs:
            for key in ("loss_nce", "loss_contact", "loss_match", "loss_total"):
                assert np.isfinite(rec[key])
            assert 0.0 <= rec["pseudo_label_pos_rate"] <= 1.0

    def test_pseudo_match_accuracy_reported(self, small_bundles):
        config = TrainConfig(epochs=1, batch_size=16, seed=7)
        _, log = train(small_bundles, config)
        assert log.epochs[0]["pseudo_match_accuracy"] == pytest.approx(1.0)


class TestPartialBatches:
    def test_last_partial_batch_kept(self, small_bundles):
        config = TrainConfig(epochs=1, batch_size=50, seed=1)  # 60 = 50 + 10
        state, log = train(small_bundles, config)
        assert state.optimizer["visual"].step == 2

    def test_samples_without_hands_still_train_nce(self, rng):
        from inhand.bundles import ObjectProposal, PhraseEntry, SampleBundle
        from inhand.masks import rect_mask
        bundles = []
        for i in range(8):
            emb = rng.standard_normal(4)
            bundles.append(SampleBundle(
                id=f"h{i}", width=8, height=8, narration="x",
                objects=[ObjectProposal(mask=rect_mask(8, 8, 0, 0, 2, 2),
                                        embedding=emb / np.linalg.norm(emb))],
                hands=[],
                phrases=[PhraseEntry(text="p",
                                     emb_left=rng.standard_normal(4),
                                     emb_right=rng.standard_normal(4))]))
        config = TrainConfig(epochs=1, batch_size=4, seed=0)
        state, log = train(bundles, config)
        assert np.isfinite(log.epochs[0]["loss_total"])
        assert log.epochs[0]["loss_contact"] == 0.0
