"""End-to-end active-annotation campaigns.

One campaign: warm up, then loop select -> apply -> teacher-student round ->
evaluate until the pool or the budget runs out.  The same engine backs the
run command, gain-sample collection for the learned objective, and the
episodic environment for Q-learning.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import lal as lal_mod
from . import policy_rl as rl_mod
from . import selection as sel
from .config import ConfigError, build_backend, build_cost_model, \
    build_dataset, build_eval_dataset, difficulty_mapping
from .dataset import BUDGET_EPS
from .pseudo import hybrid_round
from .scoring import lal_features, model_state, uncertainty


# Evaluation prediction draws use a version namespace far above any step
# index so they never reuse a scoring draw.
_EVAL_VERSION_BASE = 10 ** 6


class ActiveSimulation:
    """Mutable state of one campaign: pools, ledger, current model, metrics."""

    def __init__(self, pool, eval_dataset, costs, backend, warmup_fraction,
                 seed, training="hybrid", miner=None, eval_reps=1):
        if training not in ("hybrid", "strong_only"):
            raise ValueError(f"unknown training mode {training!r}")
        self.pool = pool
        self.eval_images = eval_dataset.images
        self.costs = costs
        self.backend = backend
        self.training = training
        self.miner = miner or {"alpha": 0.3, "beta": 3, "min_confidence": 0.05}
        self.eval_reps = max(int(eval_reps), 1)
        self.seed = int(seed)
        self.images_by_id = pool.by_id()
        self.n_classes = pool.n_classes
        self.full_pool_cost = len(pool.images) * costs.strong_cost
        self.pools, self.ledger = ds.init_pools(pool.images, costs,
                                                warmup_fraction, seed)
        self.step_index = 0
        self.records: list[dict] = []
        self._scores = None
        self._refresh_model()
        warmup_plan = ds.SelectionPlan(strong_new=self.pools.strong)
        self._append_record(warmup_plan)

    def _refresh_model(self):
        round_result = hybrid_round(
            self.pools, self.images_by_id, self.backend,
            version=self.step_index, alpha=self.miner["alpha"],
            beta=self.miner["beta"],
            min_confidence=self.miner["min_confidence"],
            strong_only=self.training == "strong_only")
        self.round = round_result
        self.model = round_result.student
        maps, tables = [], []
        for rep in range(self.eval_reps):
            tag = _EVAL_VERSION_BASE + self.step_index * self.eval_reps + rep
            eval_model = self.backend.variant(self.model, tag)
            eval_preds = {img.id: self.backend.predict(eval_model, img)
                          for img in self.eval_images}
            per_class = ev.voc_ap(eval_preds, self.eval_images, self.n_classes,
                                  iou_threshold=0.5,
                                  interpolation=ev.ELEVEN_POINT)
            maps.append(ev.mean_ap(per_class))
            tables.append(ev.ap_table(eval_preds, self.eval_images,
                                      self.n_classes))
        self.map = float(np.mean(maps))
        self.ap_table = np.mean(tables, axis=0)
        self.state_vector = model_state(self.ap_table)
        self._scores = None

    def candidate_list(self):
        return ds.candidates(self.pools)

    def scores(self) -> dict[str, float]:
        """Current-model uncertainty for every annotatable image."""
        if self._scores is None:
            self._scores = {
                image_id: uncertainty(
                    self.backend.predict(self.model, self.images_by_id[image_id]),
                    self.n_classes).value
                for image_id, _psi in self.candidate_list()}
        return self._scores

    @property
    def remaining(self) -> float:
        return self.ledger.remaining

    @property
    def budget_percent(self) -> float:
        return self.ledger.spent / self.full_pool_cost * 100.0

    def window_lower_bound(self):
        """Strict lower edge of the step window; None on the final partial step."""
        if self.remaining >= self.costs.step_budget - BUDGET_EPS:
            return self.costs.step_budget - self.costs.strong_cost
        return None

    def step_seed(self, salt=0) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            [self.seed, self.step_index + 1, int(salt)])

    def exhausted(self) -> bool:
        """True when no affordable action exists for the current pools."""
        cands = self.candidate_list()
        if not cands:
            return True
        have_unlabeled = any(psi == 0 for _, psi in cands)
        have_weak = any(psi == 1 for _, psi in cands)
        cheapest = np.inf
        if self.training == "strong_only":
            if have_unlabeled:
                cheapest = self.costs.strong_cost
        else:
            if have_unlabeled:
                cheapest = self.costs.weak_cost
            if have_weak:
                cheapest = min(cheapest, self.costs.upgrade_cost)
        return self.remaining + BUDGET_EPS < cheapest

    def apply(self, plan: ds.SelectionPlan) -> dict:
        step = self.step_index + 1
        self.pools, self.ledger = ds.apply_plan(self.pools, self.ledger, plan,
                                                self.costs, step)
        self.step_index = step
        self._refresh_model()
        return self._append_record(plan)

    def _append_record(self, plan: ds.SelectionPlan) -> dict:
        record = {
            "step": self.step_index,
            "plan": {"strong": sorted(plan.strong_new),
                     "weak": sorted(plan.weak_new),
                     "upgrade": sorted(plan.upgrades)},
            "flags": sorted(plan.flags),
            "step_spend": self.ledger.step_spends[-1],
            "spent": self.ledger.spent,
            "budget_percent": self.budget_percent,
            "map": self.map,
            "model_state": self.state_vector.tolist(),
            "pseudo_total": float(self.round.pseudo_counts.sum()),
            "pools": {"unlabeled": len(self.pools.unlabeled),
                      "weak": len(self.pools.weak),
                      "strong": len(self.pools.strong)},
        }
        self.records.append(record)
        return record


def build_policy(name, resolved):
    """Return a step function sim -> SelectionPlan for the configured policy."""
    strong_only = resolved["training"] == "strong_only"
    params = resolved.get("policy_params", {})
    if name == "rs":
        return lambda sim: sel.select_random(
            sim.candidate_list(), sim.costs, sim.remaining,
            seed=sim.step_seed(), strong_only=strong_only)
    if name in ("us", "sus"):
        order = sel.DESCENDING if name == "us" else sel.ASCENDING
        return lambda sim: sel.select_uncertainty(
            sim.candidate_list(), sim.scores(), order, sim.costs,
            sim.remaining, strong_only=strong_only)
    if name == "opt-us":
        def opt_us(sim):
            scores = sim.scores()
            return sel.select_optimization(
                sim.candidate_list(),
                lambda cands: sel.build_objective_us(cands, scores),
                sim.costs, sim.remaining,
                lower_bound=sim.window_lower_bound())
        return opt_us
    if name == "opt-lal":
        lal_params = params.get("lal", {})
        weak_reg = lal_mod.load_regressor(lal_params["weak_model"])
        strong_reg = lal_mod.load_regressor(lal_params["strong_model"])

        def opt_lal(sim):
            cands = sim.candidate_list()
            if not cands:
                return ds.SelectionPlan(flags=(sel.TERMINAL_FLAG,))
            expected = len(sim.state_vector) + 1
            for regressor in (weak_reg, strong_reg):
                if regressor.feature_dim != expected:
                    raise ConfigError(
                        f"gain regressor expects {regressor.feature_dim} "
                        f"features but this pool produces {expected}; "
                        f"collect samples on a pool with the same class "
                        f"count")
            scores = sim.scores()
            features = np.stack([
                lal_features(sim.state_vector, scores[image_id])
                for image_id, _psi in cands])
            h_w, h_s = lal_mod.predict_gains(weak_reg, strong_reg, features)
            return sel.select_optimization(
                cands,
                lambda c: sel.build_objective_lal(c, h_w, h_s),
                sim.costs, sim.remaining,
                lower_bound=sim.window_lower_bound())
        return opt_lal
    if name == "rl":
        rl_params = params.get("rl", {})
        weights = rl_params.get("weights")
        epsilon = float(rl_params.get("epsilon", 0.05))
        q_cell: dict = {"q": rl_mod.QFunction.from_json(weights) if weights
                        else None}

        def rl_policy(sim):
            if q_cell["q"] is None:
                q_cell["q"] = rl_mod.QFunction.initialize(
                    len(sim.state_vector), seed=resolved["seed"])
            action, plan = rl_mod.rl_select(
                q_cell["q"], sim.state_vector, epsilon, sim.candidate_list(),
                sim.scores(), sim.costs, sim.remaining,
                seed=sim.step_seed(salt=7))
            if not plan.is_empty:
                plan = plan.with_flag(f"rl:{action.difficulty}:{action.annotation}")
            return plan
        return rl_policy
    raise ConfigError(f"unknown policy {name!r}")


def build_simulation(resolved, seed=None) -> ActiveSimulation:
    pool = build_dataset(resolved["dataset"])
    eval_dataset, _spec = build_eval_dataset(resolved, pool)
    costs = build_cost_model(resolved, len(pool.images))
    backend = build_backend(resolved, pool.n_classes)
    return ActiveSimulation(
        pool, eval_dataset, costs, backend,
        warmup_fraction=resolved["warmup_fraction"],
        seed=resolved["seed"] if seed is None else seed,
        training=resolved["training"], miner=resolved["miner"],
        eval_reps=resolved.get("eval_reps", 1))


def run_steps(sim: ActiveSimulation, policy, max_steps=10000):
    """Drive the loop until exhaustion or an empty plan."""
    for _ in range(max_steps):
        if sim.exhausted():
            break
        plan = policy(sim)
        if plan.is_empty:
            break
        sim.apply(plan)
    return sim.records


def summarize(sim: ActiveSimulation, resolved) -> dict:
    curve = ev.run_curve(sim.records)
    range_values = []
    for lo, hi in resolved["ranges"]:
        try:
            value = ev.budget_average_map(curve, lo, hi)
        except ValueError:
            value = None
        range_values.append({"lo": lo, "hi": hi, "budget_average_map": value})
    return {
        "policy": resolved["policy"],
        "training": resolved["training"],
        "seed": resolved["seed"],
        "steps": sim.step_index,
        "final_map": sim.map,
        "final_spent_seconds": sim.ledger.spent,
        "final_budget_percent": sim.budget_percent,
        "ranges": range_values,
    }


def run_campaign(resolved, out_dir=None, render_figures=True) -> dict:
    """Execute a resolved run config; write artifacts when out_dir is given.

    Artifacts: run.jsonl, curve.csv, summary.json, resolved-config.json,
    breakdown.csv/.json, and (report path) curve.png + breakdown.png.
    """
    sim = build_simulation(resolved)
    policy = build_policy(resolved["policy"], resolved)
    run_steps(sim, policy)
    summary = summarize(sim, resolved)
    if out_dir is None:
        return {"summary": summary, "records": sim.records, "sim": sim}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run.jsonl", "w") as fh:
        for record in sim.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    curve = ev.run_curve(sim.records)
    ev.write_curve_csv(curve, out / "curve.csv")
    mapping = difficulty_mapping(resolved, sim.pool.classes)
    rows = ev.difficulty_breakdown(sim.ledger.actions_log, mapping,
                                   sim.images_by_id, sim.costs)
    ev.write_breakdown_csv(rows, out / "breakdown.csv")
    ev.write_breakdown_json(rows, out / "breakdown.json")
    resolved_doc = {"config": resolved,
                    "derived": {
                        "n_pool_images": len(sim.pool.images),
                        "n_eval_images": len(sim.eval_images),
                        "classes": list(sim.pool.classes),
                        "total_budget_seconds": sim.costs.total_budget,
                        "step_budget_seconds": sim.costs.step_budget,
                        "upgrade_cost_seconds": sim.costs.upgrade_cost,
                        "difficulty_groups": {
                            sim.pool.classes[class_id]: group
                            for class_id, group in sorted(mapping.items())},
                    }}
    with open(out / "resolved-config.json", "w") as fh:
        json.dump(resolved_doc, fh, indent=2, sort_keys=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if render_figures:
        from . import report
        report.save_curve_figure(curve, out / "curve.png",
                                 title=f"{resolved['policy']} "
                                       f"({resolved['training']})")
        report.save_breakdown_figure(rows, out / "breakdown.png")
    return {"summary": summary, "records": sim.records, "sim": sim}


def collect_gain_samples(collect_config, episodes, seed):
    """Seeded random/uncertainty episodes on a held-out pool, recording one
    (features, action type, mAP delta) sample per step.

    The held-out dataset's classes must be disjoint from the evaluation
    classes the regressors will later serve (dataset-agnostic transfer).
    """
    resolved = dict(collect_config)
    eval_classes = resolved.pop("eval_classes", None)
    if eval_classes is None:
        eval_spec = resolved.pop("eval_pool", None)
        if eval_spec is None:
            raise ConfigError("gain collection needs 'eval_classes' or an "
                              "'eval_pool' dataset spec to check class "
                              "disjointness against")
        eval_classes = build_dataset(eval_spec).classes
    policies = resolved.pop("policies", ["rs", "us"])
    from .config import resolve_run_config

    base = resolve_run_config(resolved)
    pool_classes = build_dataset(base["dataset"]).classes
    overlap = set(pool_classes) & set(eval_classes)
    if overlap:
        raise ConfigError(
            f"gain-collection classes overlap evaluation classes: "
            f"{sorted(overlap)}")
    samples: list[lal_mod.GainSample] = []
    for episode in range(episodes):
        policy_name = policies[episode % len(policies)]
        episode_resolved = dict(base, policy=policy_name,
                                seed=int(seed) + episode)
        sim = build_simulation(episode_resolved)
        policy = build_policy(policy_name, episode_resolved)
        while not sim.exhausted():
            plan = policy(sim)
            if plan.is_empty:
                break
            scores = sim.scores()
            state = sim.state_vector.copy()
            acted = sorted(plan.strong_new | plan.weak_new | plan.upgrades)
            mean_score = float(np.mean([scores[i] for i in acted]))
            weak_cost = sim.costs.weak_cost * len(plan.weak_new)
            strong_cost = (sim.costs.strong_cost * len(plan.strong_new)
                           + sim.costs.upgrade_cost * len(plan.upgrades))
            action_type = "weak" if weak_cost >= strong_cost else "strong"
            map_before = sim.map
            sim.apply(plan)
            delta = float(np.clip(sim.map - map_before, -1.0, 1.0))
            samples.append(lal_mod.GainSample(
                features=lal_features(state, mean_score),
                action_type=action_type, delta=delta))
    return samples


class SimulationEnv:
    """Episodic environment over ActiveSimulation for the Q-learning agent."""

    def __init__(self, resolved, episode_seed):
        self.resolved = resolved
        self.episode_seed = int(episode_seed)
        self.sim = None

    def reset(self):
        self.sim = build_simulation(self.resolved, seed=self.episode_seed)
        return self.sim.state_vector

    def step(self, action: rl_mod.RLAction):
        sim = self.sim
        if sim.exhausted():
            return sim.state_vector, 0.0, True
        plan = rl_mod.plan_for_action(action, sim.candidate_list(),
                                      sim.scores(), sim.costs, sim.remaining)
        if plan.is_empty:
            return sim.state_vector, 0.0, True
        before = sim.map
        sim.apply(plan)
        return sim.state_vector, sim.map - before, sim.exhausted()


def train_rl_agent(train_config, episodes, hyperparams, seed):
    """Train the Q-learning agent on episodic simulations of a run config."""
    from .config import resolve_run_config

    resolved = resolve_run_config(dict(train_config, policy="rl"))

    def env_factory(episode_seed):
        return SimulationEnv(resolved, episode_seed)

    return rl_mod.train_agent(env_factory, episodes, hyperparams, seed)
