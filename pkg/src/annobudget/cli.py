"""Command-line interface.

Subcommands: run (full campaign), metric (budget-averaged mAP from a curve
CSV), mine (pseudo-label cleaning on prediction + dataset files),
lal-collect / lal-fit (gain-sample collection and regressor fitting), and
rl-train (Q-learning agent training).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation as ev
from . import lal as lal_mod
from . import runner
from .config import ConfigError, load_run_config, resolve_run_config
from .dataset import load_dataset, save_dataset
from .detector import ingest_predictions
from .policy_rl import RLHyperparams
from .pseudo import mine_pseudo_labels


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_run(args) -> int:
    resolved = load_run_config(args.config)
    if args.seed is not None:
        resolved["seed"] = args.seed
    out_dir = Path(args.out)
    result = runner.run_campaign(resolved, out_dir=out_dir,
                                 render_figures=not args.no_figures)
    summary = result["summary"]
    print(f"policy={summary['policy']} training={summary['training']} "
          f"seed={summary['seed']} steps={summary['steps']}")
    print(f"final mAP {summary['final_map']:.4f} at "
          f"{summary['final_budget_percent']:.2f}% budget")
    for entry in summary["ranges"]:
        value = entry["budget_average_map"]
        shown = f"{100 * value:.2f}" if value is not None else "n/a"
        print(f"budget-averaged mAP [{entry['lo']:g}, {entry['hi']:g}]%: {shown}")
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_metric(args) -> int:
    curve = ev.read_curve_csv(args.curve)
    ranges = []
    for chunk in args.ranges.split(","):
        lo, hi = chunk.split(":")
        ranges.append((float(lo), float(hi)))
    results = []
    for lo, hi in ranges:
        try:
            value = ev.budget_average_map(curve, lo, hi)
        except ValueError as exc:
            print(f"[{lo:g}, {hi:g}]%: error ({exc})")
            results.append({"lo": lo, "hi": hi, "budget_average_map": None})
            continue
        print(f"[{lo:g}, {hi:g}]%: {100 * value:.2f}")
        results.append({"lo": lo, "hi": hi, "budget_average_map": value})
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"curve": args.curve, "ranges": results}, fh, indent=2,
                      sort_keys=True)
    return 0


def cmd_mine(args) -> int:
    dataset = load_dataset(args.dataset)
    predictions = ingest_predictions(args.predictions, dataset.n_classes,
                                     min_confidence=args.min_confidence)
    mined_images = []
    pseudo_flags = {}
    from .dataset import Dataset, make_image_record

    total = 0
    for img in dataset.images:
        preds = predictions.get(img.id)
        if preds is None or preds.n_boxes == 0:
            continue
        mined = mine_pseudo_labels(preds, img.weak_label, alpha=args.alpha,
                                   beta=args.beta,
                                   min_confidence=args.min_confidence)
        if mined.n_boxes == 0:
            continue
        boxes = [(tuple(box), class_id)
                 for box, class_id in zip(mined.boxes, mined.classes)]
        mined_images.append(make_image_record(img.id, img.width, img.height,
                                              boxes, dataset.n_classes))
        pseudo_flags[img.id] = set(range(len(boxes)))
        total += len(boxes)
    save_dataset(Dataset(classes=dataset.classes, images=tuple(mined_images)),
                 args.out, pseudo_flags=pseudo_flags)
    print(f"mined {total} pseudo boxes on {len(mined_images)} images "
          f"-> {args.out}")
    return 0


def cmd_lal_collect(args) -> int:
    collect_config = _load_json(args.config)
    samples = lal_mod.collect_training_pairs(collect_config, args.episodes,
                                             args.seed)
    lal_mod.save_samples(samples, args.out)
    n_weak = sum(1 for s in samples if s.action_type == "weak")
    print(f"collected {len(samples)} gain samples "
          f"({n_weak} weak / {len(samples) - n_weak} strong) -> {args.out}")
    return 0


def cmd_lal_fit(args) -> int:
    samples = lal_mod.load_samples(args.samples)
    for action_type, path in (("weak", args.out_weak),
                              ("strong", args.out_strong)):
        regressor = lal_mod.fit(samples, action_type, kind=args.regressor)
        lal_mod.save_regressor(regressor, path)
        rows = [s for s in samples if s.action_type == action_type]
        import numpy as np

        predictions = regressor.predict(np.stack([s.features for s in rows]))
        loss = float(np.mean((predictions
                              - np.array([s.delta for s in rows])) ** 2))
        print(f"{action_type}: fitted on {len(rows)} samples, "
              f"training MSE {loss:.3e} -> {path}")
    return 0


def cmd_rl_train(args) -> int:
    train_config = _load_json(args.config)
    hyperparams = RLHyperparams(hidden=args.hidden, lr=args.lr,
                                gamma=args.gamma)
    q, returns = runner.train_rl_agent(train_config, args.episodes,
                                       hyperparams, args.seed)
    q.to_json(args.out)
    if returns:
        print(f"trained {args.episodes} episodes; "
              f"mean return {sum(returns) / len(returns):.4f}, "
              f"last {returns[-1]:.4f}")
    print(f"Q weights -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annobudget",
        description="Budget-aware active-annotation selection and simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full campaign from a config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")
    p_run.set_defaults(func=cmd_run)

    p_metric = sub.add_parser(
        "metric", help="budget-averaged mAP from a curve CSV")
    p_metric.add_argument("--curve", required=True)
    p_metric.add_argument("--ranges", default="10:30,30:50,50:100",
                          help="comma-separated lo:hi percent ranges")
    p_metric.add_argument("--out", default=None, help="write results as JSON")
    p_metric.set_defaults(func=cmd_metric)

    p_mine = sub.add_parser(
        "mine", help="clean predictions into pseudo labels")
    p_mine.add_argument("--predictions", required=True)
    p_mine.add_argument("--dataset", required=True)
    p_mine.add_argument("--out", required=True)
    p_mine.add_argument("--alpha", type=float, default=0.3,
                        help="per-class suppression IoU threshold")
    p_mine.add_argument("--beta", type=int, default=3,
                        help="maximum pseudo boxes per image")
    p_mine.add_argument("--min-confidence", type=float, default=0.05)
    p_mine.set_defaults(func=cmd_mine)

    p_collect = sub.add_parser(
        "lal-collect", help="collect gain samples on a held-out pool")
    p_collect.add_argument("--config", required=True)
    p_collect.add_argument("--episodes", type=int, default=4)
    p_collect.add_argument("--seed", type=int, default=0)
    p_collect.add_argument("--out", required=True, help="samples JSONL path")
    p_collect.set_defaults(func=cmd_lal_collect)

    p_fit = sub.add_parser("lal-fit", help="fit gain regressors from samples")
    p_fit.add_argument("--samples", required=True)
    p_fit.add_argument("--out-weak", required=True)
    p_fit.add_argument("--out-strong", required=True)
    p_fit.add_argument("--regressor", choices=("svr", "ridge"), default="svr")
    p_fit.set_defaults(func=cmd_lal_fit)

    p_rl = sub.add_parser("rl-train", help="train the Q-learning agent")
    p_rl.add_argument("--config", required=True)
    p_rl.add_argument("--episodes", type=int, default=20)
    p_rl.add_argument("--seed", type=int, default=0)
    p_rl.add_argument("--hidden", type=int, default=32)
    p_rl.add_argument("--lr", type=float, default=0.01)
    p_rl.add_argument("--gamma", type=float, default=1.0)
    p_rl.add_argument("--out", required=True, help="Q weights JSON path")
    p_rl.set_defaults(func=cmd_rl_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
