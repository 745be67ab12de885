"""Pluggable detector backends.

The synthetic backend is a closed-loop stand-in for a real detector: its
per-class skill follows a saturating curve of the training-example counts,
and predictions are generated deterministically per (seed, model version,
image id).  Real detectors plug in through a prediction-file adapter.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .dataset import ImageRecord

PROB_TOL = 1e-6


class PredictionError(ValueError):
    """Malformed prediction file or inconsistent prediction set."""


@dataclass(frozen=True)
class PredictionSet:
    """A detector's output on one image.

    boxes: (M, 4) xyxy; classes: (M,) argmax class ids; confidences: (M,)
    max class probability; class_probs: (M, C) rows summing to one.
    """

    image_id: str
    boxes: np.ndarray
    classes: np.ndarray
    confidences: np.ndarray
    class_probs: np.ndarray

    @property
    def n_boxes(self) -> int:
        return int(self.boxes.shape[0])


def make_prediction_set(image_id, boxes, class_probs) -> PredictionSet:
    """Build a PredictionSet, deriving classes/confidences from class_probs."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    class_probs = np.asarray(class_probs, dtype=float)
    if class_probs.ndim == 1:
        class_probs = class_probs.reshape(0, 0) if class_probs.size == 0 \
            else class_probs.reshape(1, -1)
    if boxes.shape[0] != class_probs.shape[0]:
        raise PredictionError(
            f"image {image_id!r}: {boxes.shape[0]} boxes vs "
            f"{class_probs.shape[0]} probability rows")
    if class_probs.size:
        if class_probs.min() < -PROB_TOL:
            raise PredictionError(f"image {image_id!r}: negative class probability")
        sums = class_probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise PredictionError(
                f"image {image_id!r}: class probabilities do not sum to 1")
        class_probs = np.clip(class_probs, 0.0, None)
        class_probs = class_probs / class_probs.sum(axis=1, keepdims=True)
        classes = class_probs.argmax(axis=1)
        confidences = class_probs.max(axis=1)
    else:
        classes = np.zeros(0, dtype=int)
        confidences = np.zeros(0)
    return PredictionSet(image_id=str(image_id), boxes=boxes,
                         classes=classes.astype(int), confidences=confidences,
                         class_probs=class_probs)


def empty_prediction_set(image_id, n_classes) -> PredictionSet:
    return PredictionSet(image_id=str(image_id),
                         boxes=np.zeros((0, 4)),
                         classes=np.zeros(0, dtype=int),
                         confidences=np.zeros(0),
                         class_probs=np.zeros((0, n_classes)))


@dataclass(frozen=True)
class DetectorParams:
    """Skill-curve and noise parameters for the synthetic detector.

    sigma_max and tau are per-class arrays: sigma_max caps the reachable
    skill, tau sets how many training examples the class needs to approach it.
    """

    sigma_max: np.ndarray
    tau: np.ndarray
    pseudo_weight: float = 0.5
    noise_scale: float = 0.08
    fp_rate: float = 0.3
    fp_peak: float = 0.1
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.sigma_max)


def make_detector_params(n_classes, sigma_max=0.9, tau=8.0, pseudo_weight=0.5,
                         noise_scale=0.08, fp_rate=0.3, fp_peak=0.1,
                         seed=0) -> DetectorParams:
    """Broadcast scalar sigma_max/tau to per-class arrays."""
    sigma_max = np.broadcast_to(np.asarray(sigma_max, float), (n_classes,)).copy()
    tau = np.broadcast_to(np.asarray(tau, float), (n_classes,)).copy()
    if np.any(sigma_max < 0) or np.any(sigma_max > 1):
        raise ValueError("sigma_max must lie in [0, 1]")
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    return DetectorParams(sigma_max=sigma_max, tau=tau,
                          pseudo_weight=float(pseudo_weight),
                          noise_scale=float(noise_scale), fp_rate=float(fp_rate),
                          fp_peak=float(fp_peak), seed=int(seed))


@dataclass(frozen=True)
class SyntheticDetectorModel:
    sigma: np.ndarray
    noise_scale: float
    fp_rate: float
    fp_peak: float
    seed: int
    version: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.sigma)


def train_synthetic(strong_counts, pseudo_counts, params: DetectorParams,
                    version=0) -> SyntheticDetectorModel:
    """Fit the per-class skill from strong and (down-weighted) pseudo counts.

    sigma_c = sigma_max_c * (1 - exp(-(n_strong_c + w * n_pseudo_c) / tau_c)),
    strictly increasing in both counts below the cap.
    """
    strong_counts = np.asarray(strong_counts, dtype=float)
    pseudo_counts = np.asarray(pseudo_counts, dtype=float)
    if strong_counts.shape != (params.n_classes,) \
            or pseudo_counts.shape != (params.n_classes,):
        raise ValueError("counts must be per-class vectors")
    if np.any(strong_counts < 0) or np.any(pseudo_counts < 0):
        raise ValueError("counts must be nonnegative")
    effective = strong_counts + params.pseudo_weight * pseudo_counts
    sigma = params.sigma_max * (1.0 - np.exp(-effective / params.tau))
    return SyntheticDetectorModel(sigma=sigma, noise_scale=params.noise_scale,
                                  fp_rate=params.fp_rate, fp_peak=params.fp_peak,
                                  seed=params.seed, version=int(version))


def _stable_id_hash(image_id: str) -> int:
    digest = hashlib.blake2b(image_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _peaked_probs(n_classes, class_id, peak):
    # Linear mix of a one-hot and the uniform distribution; entropy falls
    # monotonically as peak rises, and peak=1 is exactly one-hot.
    probs = np.full(n_classes, (1.0 - peak) / n_classes)
    probs[class_id] += peak
    return probs / probs.sum()


def predict(model: SyntheticDetectorModel, image: ImageRecord) -> PredictionSet:
    """Generate seeded predictions for one image.

    Each ground-truth box of class c is emitted with probability sigma_c,
    jittered in proportion to (1 - sigma_c); false positives arrive at a
    Poisson rate that shrinks as mean skill grows.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([model.seed, model.version,
                                _stable_id_hash(image.id)]))
    n_classes = model.n_classes
    boxes, probs = [], []
    for gt in image.boxes:
        sigma_c = float(model.sigma[gt.class_id])
        if rng.random() >= sigma_c:
            continue
        xmin, ymin, xmax, ymax = gt.xyxy
        w, h = xmax - xmin, ymax - ymin
        jitter = model.noise_scale * (1.0 - sigma_c)
        if jitter > 0:
            cx = (xmin + xmax) / 2 + rng.normal(0, jitter) * w
            cy = (ymin + ymax) / 2 + rng.normal(0, jitter) * h
            w = w * np.exp(rng.normal(0, jitter))
            h = h * np.exp(rng.normal(0, jitter))
            box = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        else:
            box = gt.xyxy
        boxes.append(box)
        probs.append(_peaked_probs(n_classes, gt.class_id, sigma_c))
    if model.fp_rate > 0:
        mean_sigma = float(model.sigma.mean()) if n_classes else 0.0
        n_fp = rng.poisson(model.fp_rate * (1.0 - mean_sigma))
        for _ in range(n_fp):
            class_id = int(rng.integers(n_classes))
            bw = rng.uniform(0.05, 0.4) * max(image.width, 1)
            bh = rng.uniform(0.05, 0.4) * max(image.height, 1)
            cx = rng.uniform(bw / 2, max(image.width - bw / 2, bw / 2 + 1))
            cy = rng.uniform(bh / 2, max(image.height - bh / 2, bh / 2 + 1))
            boxes.append((cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2))
            probs.append(_peaked_probs(n_classes, class_id, model.fp_peak))
    if not boxes:
        return empty_prediction_set(image.id, n_classes)
    return make_prediction_set(image.id, np.asarray(boxes),
                               np.asarray(probs))


def ingest_predictions(path, n_classes, min_confidence=0.05):
    """Load a prediction JSON file into a map image_id -> PredictionSet.

    Expected shape: {"predictions": [{"image_id", "boxes": [[4 numbers]...],
    "class_probs": [[C numbers]...]}]}.  Classes and confidences are derived
    as argmax/max of each probability row; rows with confidence below
    min_confidence are dropped (conventional detector post-processing).
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PredictionError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict) or "predictions" not in raw:
        raise PredictionError(f"{path}: expected top-level 'predictions'")
    out: dict[str, PredictionSet] = {}
    for entry in raw["predictions"]:
        try:
            image_id = str(entry["image_id"])
            boxes = np.asarray(entry["boxes"], dtype=float).reshape(-1, 4)
            class_probs = np.asarray(entry["class_probs"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise PredictionError(f"{path}: malformed prediction entry: {exc}") from exc
        if class_probs.size and class_probs.shape[-1] != n_classes:
            raise PredictionError(
                f"image {image_id!r}: expected {n_classes} class probabilities")
        preds = make_prediction_set(image_id, boxes,
                                    class_probs.reshape(-1, n_classes))
        if preds.n_boxes:
            keep = preds.confidences >= min_confidence
            preds = PredictionSet(image_id=preds.image_id,
                                  boxes=preds.boxes[keep],
                                  classes=preds.classes[keep],
                                  confidences=preds.confidences[keep],
                                  class_probs=preds.class_probs[keep])
        if image_id in out:
            raise PredictionError(f"{path}: duplicate image id {image_id!r}")
        out[image_id] = preds
    return out


class SyntheticBackend:
    """Trainable backend wrapping the skill-curve model."""

    def __init__(self, params: DetectorParams):
        self.params = params

    @property
    def n_classes(self) -> int:
        return self.params.n_classes

    def train(self, strong_counts, pseudo_counts, version=0):
        return train_synthetic(strong_counts, pseudo_counts, self.params,
                               version=version)

    def predict(self, model, image: ImageRecord) -> PredictionSet:
        return predict(model, image)

    def variant(self, model, tag: int):
        """Same skill, fresh prediction draws (for replicated evaluation)."""
        return replace(model, version=int(tag))


class PredictionFileBackend:
    """Static backend serving predictions ingested from a file.

    Training is a no-op: the same predictions answer every round, which is
    what a one-shot dump from an external detector can support.
    """

    def __init__(self, predictions: dict[str, PredictionSet], n_classes: int):
        self.predictions = predictions
        self.n_classes = n_classes

    @classmethod
    def from_file(cls, path, n_classes, min_confidence=0.05):
        return cls(ingest_predictions(path, n_classes, min_confidence), n_classes)

    def train(self, strong_counts, pseudo_counts, version=0):
        return None

    def predict(self, model, image: ImageRecord) -> PredictionSet:
        preds = self.predictions.get(image.id)
        if preds is None:
            return empty_prediction_set(image.id, self.n_classes)
        return preds

    def variant(self, model, tag: int):
        return model
