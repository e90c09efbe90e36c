"""Scikit-learn style front door for training and prediction.

InHandSegmenter wraps the training loop and narration-free inference behind
the familiar fit/predict/score surface, so the model slots into sklearn
tooling (get_params/set_params, clone, pipelines that pass opaque X).
X is a list of SampleBundle objects or a path to a bundle JSON-Lines file.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import inference, trainer
from .bundles import SampleBundle, load_bundles
from .validation import ValidationError


def _as_bundles(x) -> list[SampleBundle]:
    if isinstance(x, str):
        return load_bundles(x)
    bundles = list(x)
    if not all(isinstance(b, SampleBundle) for b in bundles):
        raise ValidationError("X must be SampleBundle objects or a bundle file path")
    return bundles


class InHandSegmenter(BaseEstimator):
    """Weakly supervised in-hand object segmenter.

    Trains four small adapters from narration-derived phrase embeddings and
    predicts per-hand object masks from visual inputs alone.
    """

    def __init__(self, lambda_nce=0.2, lambda_match=0.1, lambda_contact=1.0,
                 gamma=0.3, focal_theta=2.0, lr=4e-6, epochs=15, batch_size=64,
                 tau=0.07, seed=0, enable_nce=True, enable_contact=True,
                 enable_match=True):
        self.lambda_nce = lambda_nce
        self.lambda_match = lambda_match
        self.lambda_contact = lambda_contact
        self.gamma = gamma
        self.focal_theta = focal_theta
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.tau = tau
        self.seed = seed
        self.enable_nce = enable_nce
        self.enable_contact = enable_contact
        self.enable_match = enable_match

    def _config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(**self.get_params())

    def fit(self, X, y=None):
        """Train on bundles with narration-derived phrase embeddings."""
        bundles = _as_bundles(X)
        self.state_, self.log_ = trainer.train(bundles, self._config())
        return self

    def predict(self, X) -> list[inference.Prediction]:
        """Per-bundle interaction masks; narrations and phrases are ignored."""
        self._check_fitted()
        return [inference.predict(self.state_, b) for b in _as_bundles(X)]

    def score(self, X, y=None) -> float:
        """Mean IoU over the left/right/both interaction classes against bundle GT."""
        self._check_fitted()
        bundles = _as_bundles(X)
        preds = [inference.predict(self.state_, b) for b in bundles]
        return inference.evaluate(preds, bundles).mean_lrb

    def evaluate(self, X) -> inference.EvalReport:
        self._check_fitted()
        bundles = _as_bundles(X)
        preds = [inference.predict(self.state_, b) for b in bundles]
        return inference.evaluate(preds, bundles)

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise ValidationError("estimator is not fitted; call fit first")
