"""Weakly supervised in-hand object segmentation from narration embeddings."""

from .bundles import (GroundTruth, HandEntry, ObjectProposal, PhraseEntry,
                      SampleBundle, load_bundles, save_bundles)
from .inference import (EvalReport, HandBox, Prediction, evaluate,
                        hand_side_assign, iou_contact_baseline,
                        matching_accuracy, predict)
from .masks import RleMask, decode_rle, encode_rle, mask_intersection_area, \
    mask_iou, mask_union_area
from .state import ModelState, init_model_state, load_checkpoint, save_checkpoint
from .synthgen import SynthConfig, generate_dataset, generate_scene, \
    oracle_matching_accuracy
from .trainer import TrainConfig, train
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "GroundTruth", "HandBox", "HandEntry", "InHandSegmenter",
    "ModelState", "ObjectProposal", "PhraseEntry", "Prediction", "RleMask",
    "SampleBundle", "SynthConfig", "TrainConfig", "ValidationError",
    "decode_rle", "encode_rle", "evaluate", "generate_dataset",
    "generate_scene", "hand_side_assign", "init_model_state",
    "iou_contact_baseline", "load_bundles", "load_checkpoint",
    "mask_intersection_area", "mask_iou", "mask_union_area",
    "matching_accuracy", "oracle_matching_accuracy", "predict",
    "save_bundles", "save_checkpoint", "train",
]


def __getattr__(name):
    # lazy: keeps sklearn off the import path for CLI runs
    if name == "InHandSegmenter":
        from .estimator import InHandSegmenter
        return InHandSegmenter
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
