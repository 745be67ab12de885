"""Learned gain predictors for the optimization-based selection method.

Two regressors (one per annotation type) map the feature vector
[model state, uncertainty score] to the observed mAP increment of taking
that annotation action.  Training pairs come from seeded episodes on a
dataset whose class set is disjoint from the evaluation pool's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import joblib
import numpy as np
from scipy.spatial.distance import pdist
from sklearn.linear_model import Ridge
from sklearn.svm import SVR

ACTION_TYPES = ("weak", "strong")


@dataclass(frozen=True)
class GainSample:
    features: np.ndarray
    action_type: str
    delta: float

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise ValueError(f"unknown action type {self.action_type!r}")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError("delta must be an mAP increment in [-1, 1]")


def save_samples(samples, path) -> None:
    """Write gain samples as JSON lines (one record per line)."""
    with open(path, "w") as fh:
        for sample in samples:
            fh.write(json.dumps({"features": sample.features.tolist(),
                                 "action_type": sample.action_type,
                                 "delta": sample.delta},
                                sort_keys=True) + "\n")


def load_samples(path) -> list[GainSample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            samples.append(GainSample(
                features=np.asarray(raw["features"], dtype=float),
                action_type=raw["action_type"], delta=float(raw["delta"])))
    return samples


@dataclass
class GainRegressor:
    action_type: str
    model: object
    feature_dim: int

    def predict(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(1, -1)
        if features.shape[0] == 0:
            return np.zeros(0)
        if features.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected {self.feature_dim} features, got {features.shape[1]}")
        return np.asarray(self.model.predict(features), dtype=float)


class _ConstantModel:
    """Degenerate fit for constant targets (no variance to regress on)."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, features):
        return np.full(len(features), self.value)


def _median_pairwise_gamma(features) -> float:
    # Kernel width = median pairwise distance; gamma = 1 / (2 * width^2).
    if len(features) < 2:
        return 1.0
    distances = pdist(features)
    median = float(np.median(distances[distances > 0])) \
        if np.any(distances > 0) else 1.0
    return 1.0 / (2.0 * median * median)


def fit(samples, action_type, kind="svr", regularization=1.0,
        insensitivity=1e-3, min_samples=10) -> GainRegressor:
    """Fit one gain regressor on the samples of the given action type."""
    rows = [s for s in samples if s.action_type == action_type]
    if len(rows) < min_samples:
        raise ValueError(
            f"need at least {min_samples} {action_type!r} samples, "
            f"got {len(rows)}")
    rows.sort(key=lambda s: (s.delta, s.features.tolist()))
    features = np.stack([s.features for s in rows])
    targets = np.array([s.delta for s in rows])
    if np.ptp(targets) < 1e-12:
        model = _ConstantModel(targets[0])
    elif kind == "svr":
        model = SVR(kernel="rbf", C=regularization, epsilon=insensitivity,
                    gamma=_median_pairwise_gamma(features))
        model.fit(features, targets)
    elif kind == "ridge":
        model = Ridge(alpha=regularization)
        model.fit(features, targets)
    else:
        raise ValueError(f"unknown regressor kind {kind!r}")
    return GainRegressor(action_type=action_type, model=model,
                         feature_dim=features.shape[1])


def predict_gains(weak_regressor: GainRegressor,
                  strong_regressor: GainRegressor, features):
    """Predicted per-candidate weak and strong gains (h_w, h_s)."""
    features = np.asarray(features, dtype=float)
    if features.size == 0:
        return np.zeros(0), np.zeros(0)
    h_w = weak_regressor.predict(features)
    h_s = strong_regressor.predict(features)
    if not (np.all(np.isfinite(h_w)) and np.all(np.isfinite(h_s))):
        raise ValueError("gain predictions must be finite")
    return h_w, h_s


def save_regressor(regressor: GainRegressor, path) -> None:
    joblib.dump(regressor, path)


def load_regressor(path) -> GainRegressor:
    regressor = joblib.load(path)
    if not isinstance(regressor, GainRegressor):
        raise ValueError(f"{path} does not contain a gain regressor")
    return regressor


def collect_training_pairs(collect_config, episodes, seed) -> list[GainSample]:
    """Run seeded episodes on a held-out pool and record per-step gains.

    Thin wrapper over the simulation engine; see runner.collect_gain_samples
    for the episode mechanics.  The config must name a dataset whose classes
    are disjoint from the evaluation pool's (validated there).
    """
    from . import runner  # deferred: runner depends on this module

    return runner.collect_gain_samples(collect_config, episodes, seed)
