"""Image pool, annotation costs, budget ledger, and pool transitions.

Images live in one of three pools: unlabeled, weakly labeled (image-level
class presence only), or strongly labeled (full boxes).  A selection plan
moves images between pools and charges the ledger.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

# Absolute slack for budget comparisons: per-action costs like 1.6 s are not
# exact binary floats, so "10 weak labels fit in 16 s" needs a tolerance.
BUDGET_EPS = 1e-9

WEAK = "weak"
STRONG = "strong"
UPGRADE = "upgrade"


class DatasetError(ValueError):
    """Malformed or inconsistent dataset file."""


class PlanError(ValueError):
    """Selection plan violates pool membership or exclusivity."""


class BudgetError(RuntimeError):
    """Action would overrun the total budget."""


@dataclass(frozen=True)
class GroundTruthBox:
    xyxy: tuple[float, float, float, float]
    class_id: int


@dataclass(frozen=True)
class ImageRecord:
    """One image: identity, geometry, ground-truth boxes, derived weak label."""

    id: str
    width: int
    height: int
    boxes: tuple[GroundTruthBox, ...]
    weak_label: tuple[int, ...]


@dataclass(frozen=True)
class Dataset:
    classes: tuple[str, ...]
    images: tuple[ImageRecord, ...]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def by_id(self) -> dict[str, ImageRecord]:
        return {img.id: img for img in self.images}


@dataclass(frozen=True)
class CostModel:
    """Per-action annotation costs (seconds) plus run and step budgets."""

    strong_cost: float
    weak_cost: float
    upgrade_cost: float
    total_budget: float
    step_budget: float

    def __post_init__(self):
        if not (self.strong_cost > self.weak_cost > 0):
            raise ValueError("need strong_cost > weak_cost > 0")
        if self.upgrade_cost <= 0:
            raise ValueError("upgrade_cost must be positive")
        if self.total_budget <= 0:
            raise ValueError("total_budget must be positive")
        if self.step_budget <= self.strong_cost:
            raise ValueError("step_budget must exceed one strong annotation")


def make_cost_model(strong_cost, weak_cost, total_budget, step_budget,
                    upgrade_cost=None) -> CostModel:
    """Build a CostModel; upgrade cost defaults to strong minus weak."""
    if upgrade_cost is None:
        upgrade_cost = strong_cost - weak_cost
    return CostModel(strong_cost=float(strong_cost), weak_cost=float(weak_cost),
                     upgrade_cost=float(upgrade_cost),
                     total_budget=float(total_budget),
                     step_budget=float(step_budget))


@dataclass(frozen=True)
class PoolState:
    unlabeled: frozenset[str]
    weak: frozenset[str]
    strong: frozenset[str]

    def __post_init__(self):
        if (self.unlabeled & self.weak) or (self.unlabeled & self.strong) \
                or (self.weak & self.strong):
            raise ValueError("pools must be pairwise disjoint")

    @property
    def all_ids(self) -> frozenset[str]:
        return self.unlabeled | self.weak | self.strong


@dataclass(frozen=True)
class BudgetLedger:
    """Cumulative spend plus a per-step and per-action audit trail."""

    total_budget: float
    spent: float = 0.0
    step_spends: tuple[float, ...] = ()
    actions_log: tuple[tuple[int, str, str], ...] = ()

    @property
    def remaining(self) -> float:
        return self.total_budget - self.spent


@dataclass(frozen=True)
class SelectionPlan:
    """One active step: ids to strong-annotate, weak-annotate, or upgrade."""

    strong_new: frozenset[str] = frozenset()
    weak_new: frozenset[str] = frozenset()
    upgrades: frozenset[str] = frozenset()
    flags: tuple[str, ...] = ()

    def cost(self, costs: CostModel) -> float:
        return (costs.strong_cost * len(self.strong_new)
                + costs.weak_cost * len(self.weak_new)
                + costs.upgrade_cost * len(self.upgrades))

    @property
    def is_empty(self) -> bool:
        return not (self.strong_new or self.weak_new or self.upgrades)

    def with_flag(self, flag: str) -> "SelectionPlan":
        return replace(self, flags=self.flags + (flag,))


def make_image_record(image_id, width, height, boxes, n_classes) -> ImageRecord:
    """Validate raw box tuples and derive the class-presence vector."""
    checked = []
    present = [0] * n_classes
    for xyxy, class_id in boxes:
        xmin, ymin, xmax, ymax = (float(v) for v in xyxy)
        if not (xmin < xmax and ymin < ymax):
            raise DatasetError(
                f"image {image_id!r}: degenerate box {list(xyxy)}")
        if not 0 <= int(class_id) < n_classes:
            raise DatasetError(
                f"image {image_id!r}: class {class_id} out of range [0, {n_classes})")
        checked.append(GroundTruthBox((xmin, ymin, xmax, ymax), int(class_id)))
        present[int(class_id)] = 1
    return ImageRecord(id=str(image_id), width=int(width), height=int(height),
                       boxes=tuple(checked), weak_label=tuple(present))


def load_dataset(path) -> Dataset:
    """Load a dataset JSON file and validate every record.

    Expected shape: {"classes": [...], "images": [{"id", "width", "height",
    "boxes": [{"xyxy": [4 numbers], "class": int}]}]}.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict) or "classes" not in raw or "images" not in raw:
        raise DatasetError(f"{path}: expected top-level 'classes' and 'images'")
    classes = tuple(str(c) for c in raw["classes"])
    if len(set(classes)) != len(classes):
        raise DatasetError(f"{path}: duplicate class names")
    images = []
    seen = set()
    for entry in raw["images"]:
        try:
            image_id = entry["id"]
            boxes = [(b["xyxy"], b["class"]) for b in entry.get("boxes", [])]
            record = make_image_record(image_id, entry.get("width", 0),
                                       entry.get("height", 0), boxes,
                                       len(classes))
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{path}: malformed image entry: {exc}") from exc
        if record.id in seen:
            raise DatasetError(f"{path}: duplicate image id {record.id!r}")
        seen.add(record.id)
        images.append(record)
    return Dataset(classes=classes, images=tuple(images))


def save_dataset(dataset: Dataset, path, pseudo_flags=None) -> None:
    """Write a dataset back to its JSON schema.

    pseudo_flags maps image id -> set of box indices to mark "pseudo": true
    (used when exporting mined labels).
    """
    payload = {"classes": list(dataset.classes), "images": []}
    for img in dataset.images:
        boxes = []
        marked = (pseudo_flags or {}).get(img.id, ())
        for i, box in enumerate(img.boxes):
            entry = {"xyxy": list(box.xyxy), "class": box.class_id}
            if i in marked:
                entry["pseudo"] = True
            boxes.append(entry)
        payload["images"].append({"id": img.id, "width": img.width,
                                  "height": img.height, "boxes": boxes})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def make_synthetic_dataset(n_images, classes, seed, max_boxes=4,
                           class_weight_decay=0.82, width=640, height=480,
                           id_prefix="img") -> Dataset:
    """Generate a random dataset with a geometric class-frequency gradient.

    Later classes are rarer, which gives the simulated detector a spread of
    per-class training-signal scarcity.
    """
    if isinstance(classes, int):
        classes = tuple(f"c{i}" for i in range(classes))
    else:
        classes = tuple(str(c) for c in classes)
    n_classes = len(classes)
    rng = np.random.default_rng(seed)
    weights = class_weight_decay ** np.arange(n_classes)
    weights /= weights.sum()
    images = []
    for i in range(n_images):
        n_boxes = 1 + rng.binomial(max_boxes - 1, 0.35)
        boxes = []
        for _ in range(n_boxes):
            class_id = int(rng.choice(n_classes, p=weights))
            bw = rng.uniform(0.08, 0.45) * width
            bh = rng.uniform(0.08, 0.45) * height
            cx = rng.uniform(bw / 2, width - bw / 2)
            cy = rng.uniform(bh / 2, height - bh / 2)
            boxes.append(((cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2),
                          class_id))
        images.append(make_image_record(f"{id_prefix}{i:05d}", width, height,
                                        boxes, n_classes))
    return Dataset(classes=classes, images=tuple(images))


def init_pools(images, costs: CostModel, warmup_fraction, seed):
    """Move a seeded-uniform warm-up subset to the strong pool.

    The warm-up takes as many strong annotations as fit under
    warmup_fraction * total_budget; one more would exceed it.
    """
    if not 0 < warmup_fraction < 1:
        raise ValueError("warmup_fraction must be in (0, 1)")
    cap = warmup_fraction * costs.total_budget
    n_warm = int(math.floor(cap / costs.strong_cost + BUDGET_EPS))
    if n_warm < 1:
        raise BudgetError("warm-up budget cannot afford one strong annotation")
    ids = sorted(img.id for img in images)
    n_warm = min(n_warm, len(ids))
    rng = np.random.default_rng(seed)
    chosen = frozenset(rng.choice(ids, size=n_warm, replace=False).tolist())
    spent = costs.strong_cost * n_warm
    pools = PoolState(unlabeled=frozenset(ids) - chosen, weak=frozenset(),
                      strong=chosen)
    ledger = BudgetLedger(
        total_budget=costs.total_budget, spent=spent, step_spends=(spent,),
        actions_log=tuple((0, image_id, STRONG) for image_id in sorted(chosen)))
    return pools, ledger


def apply_plan(pools: PoolState, ledger: BudgetLedger, plan: SelectionPlan,
               costs: CostModel, step_index: int):
    """Apply a selection plan: move ids between pools and charge the ledger."""
    if plan.strong_new & plan.weak_new:
        raise PlanError("an image cannot be both strong- and weak-annotated")
    if not plan.strong_new <= pools.unlabeled:
        raise PlanError(f"not unlabeled: {sorted(plan.strong_new - pools.unlabeled)}")
    if not plan.weak_new <= pools.unlabeled:
        raise PlanError(f"not unlabeled: {sorted(plan.weak_new - pools.unlabeled)}")
    if not plan.upgrades <= pools.weak:
        raise PlanError(f"not weakly labeled: {sorted(plan.upgrades - pools.weak)}")
    cost = plan.cost(costs)
    if ledger.spent + cost > costs.total_budget + BUDGET_EPS:
        raise BudgetError(
            f"plan costs {cost:.3f}s but only {ledger.remaining:.3f}s remain")
    new_pools = PoolState(
        unlabeled=pools.unlabeled - plan.strong_new - plan.weak_new,
        weak=(pools.weak | plan.weak_new) - plan.upgrades,
        strong=pools.strong | plan.strong_new | plan.upgrades)
    log = list(ledger.actions_log)
    for image_id in sorted(plan.strong_new):
        log.append((step_index, image_id, STRONG))
    for image_id in sorted(plan.weak_new):
        log.append((step_index, image_id, WEAK))
    for image_id in sorted(plan.upgrades):
        log.append((step_index, image_id, UPGRADE))
    new_ledger = BudgetLedger(total_budget=ledger.total_budget,
                              spent=ledger.spent + cost,
                              step_spends=ledger.step_spends + (cost,),
                              actions_log=tuple(log))
    return new_pools, new_ledger


def candidates(pools: PoolState) -> list[tuple[str, int]]:
    """All annotatable images in id order, flagged 1 if already weakly labeled."""
    out = [(image_id, 0) for image_id in pools.unlabeled]
    out += [(image_id, 1) for image_id in pools.weak]
    out.sort(key=lambda pair: pair[0])
    return out
