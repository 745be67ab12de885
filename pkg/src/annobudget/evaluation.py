"""Detection evaluation and budget-curve metrics.

Covers the classic VOC AP protocol (greedy confidence-ranked matching with
either eleven-point or all-point interpolation), budget-mAP curves, the
budget-averaged mAP over a range, and the per-step difficulty breakdown.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .dataset import CostModel, ImageRecord, STRONG, UPGRADE, WEAK
from .pseudo import iou
from .scoring import MODEL_STATE_IOUS

ELEVEN_POINT = "eleven_point"
ALL_POINT = "all_point"

DIFFICULTY_GROUPS = ("easy", "medium", "hard")


def _ap_from_curve(recalls, precisions, interpolation):
    if interpolation == ELEVEN_POINT:
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recalls >= r - 1e-12
            total += precisions[mask].max() if mask.any() else 0.0
        return total / 11.0
    if interpolation == ALL_POINT:
        # Precision envelope integrated over recall (the VOC 2010+ scheme).
        r = np.concatenate(([0.0], recalls, [1.0]))
        p = np.concatenate(([0.0], precisions, [0.0]))
        for i in range(len(p) - 2, -1, -1):
            p[i] = max(p[i], p[i + 1])
        steps = np.nonzero(r[1:] != r[:-1])[0]
        return float(((r[steps + 1] - r[steps]) * p[steps + 1]).sum())
    raise ValueError(f"unknown interpolation {interpolation!r}")


def voc_ap(predictions, images, n_classes, iou_threshold=0.5,
           interpolation=ELEVEN_POINT) -> dict[int, float]:
    """Per-class average precision for classes present in the ground truth.

    predictions: map image_id -> PredictionSet.  Detections are ranked by
    confidence and greedily matched to the best unmatched ground-truth box
    of the same class with IoU >= threshold.
    """
    gt_boxes: dict[int, dict[str, list]] = {c: {} for c in range(n_classes)}
    npos = np.zeros(n_classes, dtype=int)
    for img in images:
        for box in img.boxes:
            gt_boxes[box.class_id].setdefault(img.id, []).append(box.xyxy)
            npos[box.class_id] += 1
    detections: dict[int, list] = {c: [] for c in range(n_classes)}
    for image_id in sorted(predictions):
        preds = predictions[image_id]
        for i in range(preds.n_boxes):
            detections[int(preds.classes[i])].append(
                (float(preds.confidences[i]), image_id, i,
                 tuple(preds.boxes[i])))
    aps: dict[int, float] = {}
    for class_id in range(n_classes):
        if npos[class_id] == 0:
            continue
        dets = sorted(detections[class_id],
                      key=lambda d: (-d[0], d[1], d[2]))
        matched = {image_id: np.zeros(len(boxes), dtype=bool)
                   for image_id, boxes in gt_boxes[class_id].items()}
        tp = np.zeros(len(dets))
        fp = np.zeros(len(dets))
        for k, (_conf, image_id, _idx, box) in enumerate(dets):
            candidates = gt_boxes[class_id].get(image_id, [])
            best_iou, best_j = 0.0, -1
            for j, gt in enumerate(candidates):
                overlap = iou(box, gt)
                if overlap > best_iou:
                    best_iou, best_j = overlap, j
            if best_j >= 0 and best_iou >= iou_threshold \
                    and not matched[image_id][best_j]:
                matched[image_id][best_j] = True
                tp[k] = 1
            else:
                fp[k] = 1
        if not dets:
            aps[class_id] = 0.0
            continue
        cum_tp = np.cumsum(tp)
        cum_fp = np.cumsum(fp)
        recalls = cum_tp / npos[class_id]
        precisions = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
        aps[class_id] = _ap_from_curve(recalls, precisions, interpolation)
    return aps


def mean_ap(per_class_ap: dict[int, float]) -> float:
    """Arithmetic mean AP over the classes present in the ground truth."""
    if not per_class_ap:
        return 0.0
    return float(np.mean(list(per_class_ap.values())))


def ap_table(predictions, images, n_classes, interpolation=ALL_POINT,
             thresholds=MODEL_STATE_IOUS) -> np.ndarray:
    """(C, len(thresholds)) AP table; absent classes score 0."""
    table = np.zeros((n_classes, len(thresholds)))
    for j, thr in enumerate(thresholds):
        aps = voc_ap(predictions, images, n_classes, iou_threshold=thr,
                     interpolation=interpolation)
        for class_id, value in aps.items():
            table[class_id, j] = value
    return table


@dataclass(frozen=True)
class BudgetCurve:
    """(budget percent, mAP) samples of one run, strictly increasing budget."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("a budget curve needs at least one point")
        budgets = [p[0] for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ValueError("budget values must be strictly increasing")

    @property
    def budgets(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def maps(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def budget_average_map(curve: BudgetCurve, lo: float, hi: float) -> float:
    """Normalized area under the budget-mAP curve over [lo, hi].

    The integration window snaps to sampled checkpoints: it runs from the
    first sample at or above lo to the first sample at or above hi (or the
    final sample when none reaches hi).  The trapezoid area is divided by
    the integrated width.
    """
    if hi <= lo:
        raise ValueError("need hi > lo")
    budgets = curve.budgets
    values = curve.maps
    above_lo = np.nonzero(budgets >= lo)[0]
    if len(above_lo) == 0:
        raise ValueError(f"no curve samples at or above {lo}")
    start = int(above_lo[0])
    above_hi = np.nonzero(budgets >= hi)[0]
    end = int(above_hi[0]) if len(above_hi) else len(budgets) - 1
    if end <= start:
        raise ValueError(f"fewer than two usable samples in [{lo}, {hi}]")
    area = np.trapezoid(values[start:end + 1], budgets[start:end + 1])
    return float(area / (budgets[end] - budgets[start]))


def run_curve(records) -> BudgetCurve:
    """Extract the budget curve from run-log records.

    Each record must carry 'budget_percent' and 'map' (the warm-up record
    plus one record per active step).
    """
    records = list(records)
    if not records:
        raise ValueError("empty run log")
    return BudgetCurve(points=tuple(
        (float(r["budget_percent"]), float(r["map"])) for r in records))


def write_curve_csv(curve: BudgetCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget_percent", "map"])
        for budget, value in curve.points:
            writer.writerow([repr(float(budget)), repr(float(value))])


def read_curve_csv(path) -> BudgetCurve:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        points = [(float(row["budget_percent"]), float(row["map"]))
                  for row in reader]
    return BudgetCurve(points=tuple(points))


def resolve_difficulty(mapping: dict[int, str], image: ImageRecord) -> str:
    """Attribute an image to a group by its majority ground-truth class.

    Ties between classes resolve to the hardest group among the tied ones.
    """
    counts: dict[int, int] = {}
    for box in image.boxes:
        counts[box.class_id] = counts.get(box.class_id, 0) + 1
    if not counts:
        return DIFFICULTY_GROUPS[0]
    top = max(counts.values())
    tied = [c for c, n in counts.items() if n == top]
    try:
        groups = [mapping[c] for c in tied]
    except KeyError as exc:
        raise ValueError(f"class {exc.args[0]} missing from difficulty mapping")
    return max(groups, key=DIFFICULTY_GROUPS.index)


def difficulty_breakdown(actions_log, mapping: dict[int, str],
                         images_by_id: dict[str, ImageRecord],
                         costs: CostModel) -> list[dict]:
    """Per-step cost and image count per (difficulty group, annotation type)."""
    action_cost = {WEAK: costs.weak_cost, STRONG: costs.strong_cost,
                   UPGRADE: costs.upgrade_cost}
    cells: dict[tuple[int, str, str], dict] = {}
    for step, image_id, action in actions_log:
        group = resolve_difficulty(mapping, images_by_id[image_id])
        key = (step, group, action)
        cell = cells.setdefault(key, {"cost": 0.0, "count": 0})
        cell["cost"] += action_cost[action]
        cell["count"] += 1
    rows = []
    for (step, group, action) in sorted(cells):
        cell = cells[(step, group, action)]
        rows.append({"step": step, "group": group, "annotation": action,
                     "cost": cell["cost"], "count": cell["count"]})
    return rows


def write_breakdown_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "group", "annotation", "cost", "count"])
        for row in rows:
            writer.writerow([row["step"], row["group"], row["annotation"],
                             repr(float(row["cost"])), row["count"]])


def write_breakdown_json(rows, path) -> None:
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
