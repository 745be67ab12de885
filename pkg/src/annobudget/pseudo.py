"""Pseudo-label mining and the teacher-student hybrid training round.

Teacher predictions on weakly labeled images are cleaned into pseudo boxes
by three filters: class consistency with the image-level label, per-class
overlap suppression, and a sparsity cap on the number of kept boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ImageRecord, PoolState
from .detector import PredictionSet

DEFAULT_ALPHA = 0.3
DEFAULT_BETA = 3
DEFAULT_MIN_CONFIDENCE = 0.05


def iou(box_a, box_b) -> float:
    """Intersection over union of two xyxy boxes; 0 for degenerate boxes."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    area_a = max(ax2 - ax1, 0.0) * max(ay2 - ay1, 0.0)
    area_b = max(bx2 - bx1, 0.0) * max(by2 - by1, 0.0)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def nms_per_class(preds: PredictionSet, alpha: float) -> list[int]:
    """Greedy per-class suppression; returns surviving indices in order.

    Within each class the highest-confidence box is kept and any remaining
    box overlapping a kept one with IoU > alpha is dropped.  Boxes of
    different classes never suppress each other.
    """
    kept: list[int] = []
    for class_id in sorted(set(preds.classes.tolist())):
        members = [i for i in range(preds.n_boxes) if preds.classes[i] == class_id]
        members.sort(key=lambda i: (-preds.confidences[i], i))
        chosen: list[int] = []
        for i in members:
            if all(iou(preds.boxes[i], preds.boxes[j]) <= alpha for j in chosen):
                chosen.append(i)
        kept.extend(chosen)
    return sorted(kept)


@dataclass(frozen=True)
class PseudoLabelSet:
    """Cleaned pseudo labels: surviving indices into the source predictions."""

    image_id: str
    selected: tuple[int, ...]
    boxes: np.ndarray
    classes: tuple[int, ...]
    confidences: tuple[float, ...]

    @property
    def n_boxes(self) -> int:
        return len(self.selected)

    @property
    def confidence_sum(self) -> float:
        return float(sum(self.confidences))


def mine_pseudo_labels(preds: PredictionSet, weak_label, alpha=DEFAULT_ALPHA,
                       beta=DEFAULT_BETA,
                       min_confidence=DEFAULT_MIN_CONFIDENCE) -> PseudoLabelSet:
    """Clean one image's teacher predictions into pseudo labels.

    Steps: drop low-confidence boxes, drop boxes whose class is absent from
    the weak label, run per-class suppression at alpha, and keep at most the
    beta most confident survivors.  An empty result is a valid outcome (the
    image simply contributes no pseudo labels this round).
    """
    weak_label = np.asarray(weak_label, dtype=int)
    survivors = [i for i in range(preds.n_boxes)
                 if preds.confidences[i] >= min_confidence
                 and weak_label[preds.classes[i]] == 1]
    if survivors:
        sub = PredictionSet(image_id=preds.image_id,
                            boxes=preds.boxes[survivors],
                            classes=preds.classes[survivors],
                            confidences=preds.confidences[survivors],
                            class_probs=preds.class_probs[survivors])
        kept_local = nms_per_class(sub, alpha)
        survivors = [survivors[i] for i in kept_local]
    if len(survivors) > beta:
        survivors.sort(key=lambda i: (-preds.confidences[i], i))
        survivors = sorted(survivors[:beta])
    return PseudoLabelSet(
        image_id=preds.image_id,
        selected=tuple(survivors),
        boxes=preds.boxes[survivors].copy() if survivors else np.zeros((0, 4)),
        classes=tuple(int(preds.classes[i]) for i in survivors),
        confidences=tuple(float(preds.confidences[i]) for i in survivors))


def class_box_counts(images, n_classes) -> np.ndarray:
    """Per-class ground-truth box counts over a set of images."""
    counts = np.zeros(n_classes)
    for img in images:
        for box in img.boxes:
            counts[box.class_id] += 1
    return counts


@dataclass
class HybridRound:
    teacher: object
    student: object
    pseudo_counts: np.ndarray
    pseudo_labels: dict[str, PseudoLabelSet]


def hybrid_round(pools: PoolState, images_by_id: dict[str, ImageRecord],
                 backend, version=0, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA,
                 min_confidence=DEFAULT_MIN_CONFIDENCE,
                 strong_only=False) -> HybridRound:
    """One teacher-student round.

    The teacher trains on the strong pool and predicts on every weakly
    labeled image; mined pseudo labels then join the strong counts to train
    the student.  With strong_only=True (or an empty weak pool) the student
    is just the teacher.
    """
    if not pools.strong:
        raise ValueError("cannot train: the strong pool is empty")
    n_classes = backend.n_classes
    strong_counts = class_box_counts(
        (images_by_id[i] for i in pools.strong), n_classes)
    teacher = backend.train(strong_counts, np.zeros(n_classes), version=version)
    pseudo_counts = np.zeros(n_classes)
    pseudo_labels: dict[str, PseudoLabelSet] = {}
    if not strong_only and pools.weak:
        for image_id in sorted(pools.weak):
            image = images_by_id[image_id]
            preds = backend.predict(teacher, image)
            mined = mine_pseudo_labels(preds, image.weak_label, alpha=alpha,
                                       beta=beta, min_confidence=min_confidence)
            pseudo_labels[image_id] = mined
            for class_id in mined.classes:
                pseudo_counts[class_id] += 1
        student = backend.train(strong_counts, pseudo_counts, version=version)
    else:
        student = teacher
    return HybridRound(teacher=teacher, student=student,
                       pseudo_counts=pseudo_counts, pseudo_labels=pseudo_labels)
