"""Action-selection methods for one active step.

Four families: random and uncertainty-ordered weak-first fills, and two
optimization methods that maximize a linear gain objective over the three
action vectors (strong-annotate, weak-annotate, upgrade) subject to
exclusivity and a per-step budget window, via an LP relaxation followed by
threshold rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .dataset import BUDGET_EPS, CostModel, SelectionPlan

DESCENDING = "descending"
ASCENDING = "ascending"

TERMINAL_FLAG = "terminal"
FALLBACK_FLAG = "rounding_fallback"
UNDER_WINDOW_FLAG = "under_budget_window"


class InfeasibleStepError(RuntimeError):
    """No selection satisfies the step's budget window."""


@dataclass(frozen=True)
class ObjectiveCoefficients:
    """Per-candidate linear gains for the three actions.

    Order matches the candidate list; psi marks already-weak images, for
    which only the upgrade action is available.
    """

    ids: tuple[str, ...]
    psi: np.ndarray
    strong_gain: np.ndarray
    weak_gain: np.ndarray
    upgrade_gain: np.ndarray
    pivot: float = 0.0

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class FractionalSolution:
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    objective_value: float


def _weak_first_fill(ordered_unlabeled, ordered_weak, costs: CostModel,
                     budget_cap: float, strong_only: bool) -> SelectionPlan:
    """Consume candidates in the given orders until nothing more fits.

    Hybrid policy: weak-annotate unlabeled images first; only when the
    unlabeled list is exhausted, upgrade weak images.  Strong-only policy:
    strong-annotate unlabeled images.
    """
    spend = 0.0
    strong_new, weak_new, upgrades = [], [], []
    if strong_only:
        for image_id in ordered_unlabeled:
            if spend + costs.strong_cost > budget_cap + BUDGET_EPS:
                break
            strong_new.append(image_id)
            spend += costs.strong_cost
    else:
        exhausted_unlabeled = True
        for image_id in ordered_unlabeled:
            if spend + costs.weak_cost > budget_cap + BUDGET_EPS:
                exhausted_unlabeled = False
                break
            weak_new.append(image_id)
            spend += costs.weak_cost
        if exhausted_unlabeled:
            for image_id in ordered_weak:
                if spend + costs.upgrade_cost > budget_cap + BUDGET_EPS:
                    break
                upgrades.append(image_id)
                spend += costs.upgrade_cost
    plan = SelectionPlan(strong_new=frozenset(strong_new),
                         weak_new=frozenset(weak_new),
                         upgrades=frozenset(upgrades))
    if plan.is_empty:
        plan = plan.with_flag(TERMINAL_FLAG)
    return plan


def select_random(candidates, costs: CostModel, remaining_budget, seed,
                  strong_only=False) -> SelectionPlan:
    """Weak-first fill over a seeded-uniform candidate shuffle."""
    budget_cap = min(costs.step_budget, remaining_budget)
    rng = np.random.default_rng(seed)
    unlabeled = [image_id for image_id, psi in candidates if psi == 0]
    weak = [image_id for image_id, psi in candidates if psi == 1]
    rng.shuffle(unlabeled)
    rng.shuffle(weak)
    return _weak_first_fill(unlabeled, weak, costs, budget_cap, strong_only)


def select_uncertainty(candidates, scores, order, costs: CostModel,
                       remaining_budget, strong_only=False) -> SelectionPlan:
    """Weak-first fill consuming candidates in uncertainty order.

    order='descending' takes the most uncertain images first;
    'ascending' the least uncertain.  Ties break by image id.
    """
    if order not in (DESCENDING, ASCENDING):
        raise ValueError(f"unknown order {order!r}")
    budget_cap = min(costs.step_budget, remaining_budget)
    sign = -1.0 if order == DESCENDING else 1.0

    def sort_key(image_id):
        return (sign * scores[image_id], image_id)

    unlabeled = sorted((i for i, psi in candidates if psi == 0), key=sort_key)
    weak = sorted((i for i, psi in candidates if psi == 1), key=sort_key)
    return _weak_first_fill(unlabeled, weak, costs, budget_cap, strong_only)


def build_objective_us(candidates, scores) -> ObjectiveCoefficients:
    """Uncertainty-driven gains: strong actions earn the image's score, a
    weak annotation earns (median - score), so above-median images push
    toward full supervision."""
    ids = tuple(image_id for image_id, _ in candidates)
    if not ids:
        raise ValueError("need at least one candidate")
    psi = np.array([psi for _, psi in candidates], dtype=float)
    s = np.array([scores[image_id] for image_id in ids], dtype=float)
    pivot = float(np.median(s))
    return ObjectiveCoefficients(ids=ids, psi=psi, strong_gain=s.copy(),
                                 weak_gain=pivot - s, upgrade_gain=s.copy(),
                                 pivot=pivot)


def build_objective_lal(candidates, weak_gains, strong_gains) -> ObjectiveCoefficients:
    """Learned gains: regressor predictions drive the objective directly."""
    ids = tuple(image_id for image_id, _ in candidates)
    weak_gains = np.asarray(weak_gains, dtype=float)
    strong_gains = np.asarray(strong_gains, dtype=float)
    if weak_gains.shape != (len(ids),) or strong_gains.shape != (len(ids),):
        raise ValueError("gain vectors must cover the candidate list")
    psi = np.array([psi for _, psi in candidates], dtype=float)
    return ObjectiveCoefficients(ids=ids, psi=psi,
                                 strong_gain=strong_gains.copy(),
                                 weak_gain=weak_gains.copy(),
                                 upgrade_gain=strong_gains.copy())


def solve_relaxed_lp(coeffs: ObjectiveCoefficients, costs: CostModel,
                     step_budget, lower_bound=None) -> FractionalSolution:
    """Solve the continuous relaxation of the step-selection program.

    Maximizes the linear gains over x1, x2, x3 in [0,1]^N subject to
    x3 <= psi, x1 + x2 <= 1 - psi, and total cost within
    [lower_bound, step_budget].  lower_bound=None drops the lower limit
    (used for the final, partial step of a run).
    """
    n = coeffs.n
    psi = coeffs.psi
    a, b, c = costs.strong_cost, costs.weak_cost, costs.upgrade_cost
    if lower_bound is not None and lower_bound <= 0:
        lower_bound = None
    max_cost = a * float((psi == 0).sum()) + c * float((psi == 1).sum())
    if lower_bound is not None and max_cost < lower_bound - BUDGET_EPS:
        raise InfeasibleStepError(
            f"candidates can only absorb {max_cost:.3f}s "
            f"but the budget window starts at {lower_bound:.3f}s")
    objective = -np.concatenate([coeffs.strong_gain, coeffs.weak_gain,
                                 coeffs.upgrade_gain])
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    for k in np.nonzero(psi == 0)[0]:  # x1_k + x2_k <= 1
        rows += [row, row]
        cols += [int(k), n + int(k)]
        vals += [1.0, 1.0]
        rhs.append(1.0)
        row += 1
    cost_coeffs = np.concatenate([np.full(n, a), np.full(n, b), np.full(n, c)])
    rows += [row] * (3 * n)
    cols += list(range(3 * n))
    vals += cost_coeffs.tolist()
    rhs.append(float(step_budget))
    row += 1
    if lower_bound is not None:
        rows += [row] * (3 * n)
        cols += list(range(3 * n))
        vals += (-cost_coeffs).tolist()
        rhs.append(-float(lower_bound))
        row += 1
    a_ub = coo_matrix((vals, (rows, cols)), shape=(row, 3 * n))
    upper = np.concatenate([1.0 - psi, 1.0 - psi, psi])
    bounds = [(0.0, float(u)) for u in upper]
    result = linprog(objective, A_ub=a_ub, b_ub=np.array(rhs), bounds=bounds,
                     method="highs")
    if not result.success:
        raise InfeasibleStepError(f"relaxed program failed: {result.message}")
    x = np.clip(result.x, 0.0, 1.0)
    return FractionalSolution(x1=x[:n], x2=x[n:2 * n], x3=x[2 * n:],
                              objective_value=float(-result.fun))


def epsilon_grid(frac: FractionalSolution) -> np.ndarray:
    """Exact sweep grid: every distinct threshold at which some coordinate
    flips, plus midpoints.  Thresholding is piecewise constant between
    consecutive values, so this grid covers all distinct roundings."""
    values = np.unique(np.concatenate(
        [frac.x1, 1.0 - frac.x2, frac.x3, [0.0, 1.0]]))
    values = values[(values >= 0.0) & (values <= 1.0)]
    mids = (values[:-1] + values[1:]) / 2.0
    return np.unique(np.concatenate([values, mids]))


def _plan_from_threshold(frac: FractionalSolution, eps: float):
    x1 = frac.x1 > eps
    x2 = frac.x2 > 1.0 - eps
    x3 = frac.x3 > eps
    return x1, x2, x3


def _masks_to_plan(coeffs: ObjectiveCoefficients, x1, x2, x3) -> SelectionPlan:
    ids = coeffs.ids
    return SelectionPlan(
        strong_new=frozenset(ids[k] for k in np.nonzero(x1)[0]),
        weak_new=frozenset(ids[k] for k in np.nonzero(x2)[0]),
        upgrades=frozenset(ids[k] for k in np.nonzero(x3)[0]))


def _masks_objective(coeffs: ObjectiveCoefficients, x1, x2, x3) -> float:
    return float(coeffs.strong_gain[x1].sum() + coeffs.weak_gain[x2].sum()
                 + coeffs.upgrade_gain[x3].sum())


def _masks_cost(costs: CostModel, x1, x2, x3) -> float:
    return (costs.strong_cost * int(x1.sum()) + costs.weak_cost * int(x2.sum())
            + costs.upgrade_cost * int(x3.sum()))


def _greedy_window_fill(coeffs: ObjectiveCoefficients, costs: CostModel,
                        step_budget, lower_bound):
    """Density-ordered integer fill used when no sweep threshold lands in
    the budget window.  Positive-gain actions go in first; if the window's
    lower edge is still unmet, the least-bad remaining actions top it up."""
    options = []
    for k in range(coeffs.n):
        if coeffs.psi[k] == 1:
            options.append((k, 2, coeffs.upgrade_gain[k], costs.upgrade_cost))
        else:
            options.append((k, 0, coeffs.strong_gain[k], costs.strong_cost))
            options.append((k, 1, coeffs.weak_gain[k], costs.weak_cost))
    options.sort(key=lambda o: (-o[2] / o[3], coeffs.ids[o[0]], o[1]))
    taken: dict[int, int] = {}
    spend = 0.0
    for k, action, gain, cost in options:
        if gain <= 0 or k in taken:
            continue
        if spend + cost > step_budget + BUDGET_EPS:
            continue
        taken[k] = action
        spend += cost
    if lower_bound is not None:
        remaining = [o for o in options if o[0] not in taken]
        remaining.sort(key=lambda o: (-o[2], coeffs.ids[o[0]], o[1]))
        for k, action, gain, cost in remaining:
            if spend > lower_bound + BUDGET_EPS:
                break
            if k in taken or spend + cost > step_budget + BUDGET_EPS:
                continue
            taken[k] = action
            spend += cost
    x1 = np.zeros(coeffs.n, dtype=bool)
    x2 = np.zeros(coeffs.n, dtype=bool)
    x3 = np.zeros(coeffs.n, dtype=bool)
    for k, action in taken.items():
        (x1, x2, x3)[action][k] = True
    return x1, x2, x3


def round_solution(frac: FractionalSolution, coeffs: ObjectiveCoefficients,
                   costs: CostModel, step_budget,
                   lower_bound=None) -> SelectionPlan:
    """Project a fractional solution onto binary plans by threshold sweep.

    Thresholds (eps, 1-eps, eps) are applied to (x1, x2, x3); exclusivity
    holds for every eps by construction, and the sweep keeps the feasible
    plan (cost strictly above the window's lower edge, at most the step
    budget) with the best objective.  If no threshold lands in the window a
    greedy density fill is used instead and the plan is flagged.
    """
    if lower_bound is not None and lower_bound <= 0:
        lower_bound = None
    best = None
    best_objective = -np.inf
    for eps in epsilon_grid(frac):
        x1, x2, x3 = _plan_from_threshold(frac, eps)
        cost = _masks_cost(costs, x1, x2, x3)
        if cost > step_budget + BUDGET_EPS:
            continue
        if lower_bound is not None and cost <= lower_bound + BUDGET_EPS:
            continue
        objective = _masks_objective(coeffs, x1, x2, x3)
        if objective > best_objective:
            best_objective = objective
            best = (x1, x2, x3)
    if best is not None:
        plan = _masks_to_plan(coeffs, *best)
        return plan.with_flag(TERMINAL_FLAG) if plan.is_empty else plan
    x1, x2, x3 = _greedy_window_fill(coeffs, costs, step_budget, lower_bound)
    cost = _masks_cost(costs, x1, x2, x3)
    plan = _masks_to_plan(coeffs, x1, x2, x3).with_flag(FALLBACK_FLAG)
    if plan.is_empty:
        return plan.with_flag(TERMINAL_FLAG)
    if lower_bound is not None and cost <= lower_bound + BUDGET_EPS:
        plan = plan.with_flag(UNDER_WINDOW_FLAG)
    return plan


def select_optimization(candidates, objective_builder, costs: CostModel,
                        remaining_budget, lower_bound=None) -> SelectionPlan:
    """Compose objective -> relaxed solve -> rounding for one step.

    An infeasible window (too few candidates left to reach the lower edge)
    yields a terminal empty plan for the caller to stop on.
    """
    if not candidates:
        return SelectionPlan(flags=(TERMINAL_FLAG,))
    step_budget = min(costs.step_budget, remaining_budget)
    coeffs = objective_builder(candidates)
    try:
        frac = solve_relaxed_lp(coeffs, costs, step_budget,
                                lower_bound=lower_bound)
    except InfeasibleStepError:
        return SelectionPlan(flags=(TERMINAL_FLAG,))
    return round_solution(frac, coeffs, costs, step_budget,
                          lower_bound=lower_bound)
