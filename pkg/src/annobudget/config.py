"""Run-configuration parsing, defaults, and object construction.

A run config is a single JSON document.  Every non-obvious default is
materialized into the emitted resolved config so runs are self-describing.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .dataset import CostModel, Dataset, load_dataset, make_cost_model, \
    make_synthetic_dataset
from .detector import PredictionFileBackend, SyntheticBackend, \
    make_detector_params
from .evaluation import DIFFICULTY_GROUPS

POLICIES = ("rs", "us", "sus", "opt-us", "opt-lal", "rl")
TRAINING_MODES = ("hybrid", "strong_only")
DEFAULT_RANGES = ((10.0, 30.0), (30.0, 50.0), (50.0, 100.0))


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def default_run_config(policy="rs", seed=0, n_images=120, n_classes=8,
                       training="hybrid") -> dict:
    """A complete, runnable synthetic-campaign configuration.

    The detector gets a per-class hardness gradient (later classes cap lower
    and learn slower) matching the synthetic dataset's rarity gradient, so
    uncertainty carries a real signal about where the model is weak.  The
    numeric defaults below are the calibrated desk-scale environment; all of
    them land in the emitted resolved config.
    """
    sigma_max = np.linspace(0.95, 0.75, n_classes)
    tau = np.linspace(4.0, 20.0, n_classes)
    return {
        "seed": seed,
        "policy": policy,
        "training": training,
        "warmup_fraction": 0.10,
        "dataset": {"synthetic": {"images": n_images, "classes": n_classes,
                                  "seed": seed,
                                  "class_weight_decay": 0.75}},
        "eval_dataset": {"synthetic": {"images": n_images,
                                       "classes": n_classes,
                                       "seed": seed + 1000,
                                       "class_weight_decay": 0.75}},
        "cost": {"strong": 34.5, "weak": 1.6, "upgrade": None,
                 "total_fraction": 1.0, "total_seconds": None,
                 "step_fraction": 0.05, "step_seconds": None},
        "detector": {"synthetic": {"sigma_max": sigma_max.tolist(),
                                   "tau": tau.tolist(),
                                   "pseudo_weight": 0.3,
                                   "noise_scale": 0.08,
                                   "fp_rate": 0.15,
                                   "fp_peak": 0.1}},
        "miner": {"alpha": 0.3, "beta": 3, "min_confidence": 0.05},
        "policy_params": {},
        "ranges": [list(r) for r in DEFAULT_RANGES],
        "difficulty_groups": None,
        "eval_reps": 3,
    }


def _merge_defaults(raw: dict, defaults: dict) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_defaults(value, merged[key])
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_run_config(raw: dict) -> dict:
    """Fill defaults and validate the structural parts of a run config."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - set(default_run_config())
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = _merge_defaults(raw, default_run_config())
    if "dataset" in raw:
        resolved["dataset"] = copy.deepcopy(raw["dataset"])
        if "eval_dataset" not in raw:
            resolved["eval_dataset"] = None
    if resolved["policy"] not in POLICIES:
        raise ConfigError(f"unknown policy {resolved['policy']!r}; "
                          f"expected one of {POLICIES}")
    if resolved["training"] not in TRAINING_MODES:
        raise ConfigError(f"unknown training mode {resolved['training']!r}")
    if resolved["training"] == "strong_only" \
            and resolved["policy"] not in ("rs", "us", "sus"):
        raise ConfigError("strong_only training supports the rs, us and sus "
                          "policies only")
    if not 0 < resolved["warmup_fraction"] < 1:
        raise ConfigError("warmup_fraction must lie in (0, 1)")
    for lo, hi in resolved["ranges"]:
        if hi <= lo:
            raise ConfigError(f"invalid budget range [{lo}, {hi}]")
    if resolved["policy"] == "opt-lal":
        lal = resolved["policy_params"].get("lal", {})
        if not lal.get("weak_model") or not lal.get("strong_model"):
            raise ConfigError("policy opt-lal needs policy_params.lal."
                              "weak_model and .strong_model regressor files")
    return resolved


def load_run_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return resolve_run_config(raw)


def build_dataset(spec) -> Dataset:
    """Build a dataset from a path string or a {"path"|"synthetic"} object."""
    if isinstance(spec, str):
        return load_dataset(spec)
    if isinstance(spec, dict) and "path" in spec:
        return load_dataset(spec["path"])
    if isinstance(spec, dict) and "synthetic" in spec:
        synth = dict(spec["synthetic"])
        try:
            n_images = synth.pop("images")
            classes = synth.pop("classes")
            seed = synth.pop("seed")
        except KeyError as exc:
            raise ConfigError(f"synthetic dataset spec missing {exc}") from exc
        return make_synthetic_dataset(n_images, classes, seed, **synth)
    raise ConfigError(f"cannot interpret dataset spec: {spec!r}")


def build_eval_dataset(resolved: dict, pool: Dataset) -> tuple[Dataset, object]:
    """The evaluation set named by the config, or a derived default.

    Returns (dataset, spec-actually-used).  Without an explicit eval set, a
    synthetic pool gets a synthetic sibling (same shape, shifted seed) and a
    file-backed pool is evaluated on itself.
    """
    spec = resolved.get("eval_dataset")
    if spec:
        return build_dataset(spec), spec
    pool_spec = resolved["dataset"]
    if isinstance(pool_spec, dict) and "synthetic" in pool_spec:
        sibling = copy.deepcopy(pool_spec)
        sibling["synthetic"]["seed"] = int(pool_spec["synthetic"]["seed"]) + 1000
        sibling["synthetic"]["images"] = max(
            int(pool_spec["synthetic"]["images"]) // 2, 20)
        return build_dataset(sibling), sibling
    return pool, {"same_as_pool": True}


def build_cost_model(resolved: dict, n_pool_images: int) -> CostModel:
    cost = resolved["cost"]
    full_pool = n_pool_images * float(cost["strong"])
    if cost.get("total_seconds"):
        total = float(cost["total_seconds"])
    else:
        total = float(cost["total_fraction"]) * full_pool
    if cost.get("step_seconds"):
        step = float(cost["step_seconds"])
    else:
        step = float(cost["step_fraction"]) * total
    try:
        return make_cost_model(cost["strong"], cost["weak"], total, step,
                               upgrade_cost=cost.get("upgrade"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_backend(resolved: dict, n_classes: int):
    detector = resolved["detector"]
    if "predictions" in detector:
        return PredictionFileBackend.from_file(
            detector["predictions"], n_classes,
            min_confidence=resolved["miner"]["min_confidence"])
    if "synthetic" not in detector:
        raise ConfigError("detector config needs 'synthetic' or 'predictions'")
    synth = detector["synthetic"]
    try:
        params = make_detector_params(
            n_classes, sigma_max=synth["sigma_max"], tau=synth["tau"],
            pseudo_weight=synth["pseudo_weight"],
            noise_scale=synth["noise_scale"], fp_rate=synth["fp_rate"],
            fp_peak=synth["fp_peak"], seed=resolved["seed"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad synthetic detector config: {exc}") from exc
    return SyntheticBackend(params)


def difficulty_mapping(resolved: dict, classes) -> dict[int, str]:
    """class_id -> difficulty group; defaults to index-order thirds."""
    groups = resolved.get("difficulty_groups")
    if groups is None:
        parts = np.array_split(np.arange(len(classes)), 3)
        return {int(class_id): DIFFICULTY_GROUPS[i]
                for i, part in enumerate(parts) for class_id in part}
    name_to_id = {name: i for i, name in enumerate(classes)}
    mapping: dict[int, str] = {}
    for group, members in groups.items():
        if group not in DIFFICULTY_GROUPS:
            raise ConfigError(f"unknown difficulty group {group!r}")
        for name in members:
            if name not in name_to_id:
                raise ConfigError(f"difficulty group names unknown class {name!r}")
            mapping[name_to_id[name]] = group
    missing = set(range(len(classes))) - set(mapping)
    if missing:
        raise ConfigError(
            f"difficulty mapping misses classes {sorted(classes[i] for i in missing)}")
    return mapping
