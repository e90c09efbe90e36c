"""Estimator facade: sklearn parameter protocol and fit/predict/score."""

import numpy as np
import pytest
from sklearn.base import clone

from inhand.estimator import InHandSegmenter
from inhand.inference import Prediction
from inhand.synthgen import SynthConfig, generate_bundles
from inhand.validation import ValidationError


@pytest.fixture(scope="module")
def bundles():
    return generate_bundles(SynthConfig(num_samples=80, d_v=8, grid=16, seed=31))


class TestParams:
    def test_get_params_round_trip(self):
        est = InHandSegmenter(epochs=3, lr=0.5, gamma=0.4)
        params = est.get_params()
        assert params["epochs"] == 3 and params["lr"] == 0.5
        est2 = InHandSegmenter(**params)
        assert est2.get_params() == params

    def test_set_params(self):
        est = InHandSegmenter()
        est.set_params(epochs=7, enable_nce=False)
        assert est.epochs == 7 and est.enable_nce is False

    def test_clone_preserves_params(self):
        est = InHandSegmenter(epochs=2, seed=9)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()


class TestFitPredict:
    def test_fit_returns_self_and_sets_state(self, bundles):
        est = InHandSegmenter(epochs=1, batch_size=16, seed=1)
        out = est.fit(bundles[:64])
        assert out is est
        assert hasattr(est, "state_") and hasattr(est, "log_")

    def test_predict_before_fit_rejected(self, bundles):
        with pytest.raises(ValidationError, match="not fitted"):
            InHandSegmenter().predict(bundles[:2])

    def test_predict_shapes(self, bundles):
        est = InHandSegmenter(epochs=1, batch_size=16, seed=1).fit(bundles[:64])
        preds = est.predict(bundles[64:])
        assert len(preds) == 16
        assert all(isinstance(p, Prediction) for p in preds)

    def test_score_in_unit_interval(self, bundles):
        est = InHandSegmenter(epochs=1, batch_size=16, seed=1).fit(bundles[:64])
        score = est.score(bundles[64:])
        assert 0.0 <= score <= 1.0

    def test_fit_from_path(self, bundles, tmp_path):
        from inhand.bundles import save_bundles
        path = str(tmp_path / "data.jsonl")
        save_bundles(bundles[:48], path)
        est = InHandSegmenter(epochs=1, batch_size=16, seed=1).fit(path)
        assert hasattr(est, "state_")

    def test_invalid_x_rejected(self):
        with pytest.raises(ValidationError, match="SampleBundle"):
            InHandSegmenter().fit([1, 2, 3])
