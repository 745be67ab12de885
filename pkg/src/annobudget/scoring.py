"""Per-image uncertainty scores and the detector model-state vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import PredictionSet

# AP is tracked at these IoU thresholds to summarize the model state.
MODEL_STATE_IOUS = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class UncertaintyScore:
    image_id: str
    value: float


def entropy(probs) -> float:
    """Shannon entropy in nats, with 0*log(0) = 0."""
    probs = np.asarray(probs, dtype=float)
    positive = probs[probs > 0]
    return float(-(positive * np.log(positive)).sum())


def uncertainty(preds: PredictionSet, n_classes: int) -> UncertaintyScore:
    """Mean per-box classification entropy of a prediction set.

    An image with no predictions scores the maximum ln(C): a model that sees
    nothing there is treated as maximally unsure, so such images are
    prioritized for labeling instead of starved.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if preds.n_boxes == 0:
        return UncertaintyScore(preds.image_id, float(np.log(n_classes)))
    total = sum(entropy(row) for row in preds.class_probs)
    return UncertaintyScore(preds.image_id, total / preds.n_boxes)


def model_state(ap_table) -> np.ndarray:
    """Flatten a (C, 5) per-class AP table into the model-state vector."""
    ap_table = np.asarray(ap_table, dtype=float)
    if ap_table.ndim != 2 or ap_table.shape[1] != len(MODEL_STATE_IOUS):
        raise ValueError(
            f"expected a (C, {len(MODEL_STATE_IOUS)}) AP table, got {ap_table.shape}")
    if np.any(ap_table < 0) or np.any(ap_table > 1):
        raise ValueError("AP entries must lie in [0, 1]")
    return ap_table.reshape(-1).copy()


def lal_features(state: np.ndarray, score: float) -> np.ndarray:
    """Feature vector for the gain regressors: model state plus one score."""
    state = np.asarray(state, dtype=float).reshape(-1)
    return np.concatenate([state, [float(score)]])
