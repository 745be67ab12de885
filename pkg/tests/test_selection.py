import numpy as np
import pytest

from annobudget.dataset import make_cost_model
from annobudget.selection import (ASCENDING, DESCENDING, FALLBACK_FLAG,
                                  TERMINAL_FLAG, FractionalSolution,
                                  build_objective_lal, build_objective_us,
                                  epsilon_grid, round_solution,
                                  select_optimization, select_random,
                                  select_uncertainty, solve_relaxed_lp)
from oracles import integer_optimum

HIGH_COSTS = make_cost_model(34.5, 1.6, total_budget=100000.0,
                             step_budget=172.5)
LOW_COSTS = make_cost_model(7.0, 1.6, total_budget=100000.0, step_budget=35.0)


def unlabeled_candidates(n, prefix="u"):
    return [(f"{prefix}{k:03d}", 0) for k in range(n)]


def weak_candidates(n, prefix="w"):
    return [(f"{prefix}{k:03d}", 1) for k in range(n)]


def test_select_random_weak_first_fills_budget():
    costs = make_cost_model(10.0, 1.6, total_budget=1000.0, step_budget=16.0)
    plan = select_random(unlabeled_candidates(10), costs,
                         remaining_budget=500.0, seed=0)
    assert len(plan.weak_new) == 10  # floor(16 / 1.6)
    assert not plan.strong_new and not plan.upgrades


def test_select_random_upgrades_when_unlabeled_empty():
    costs = make_cost_model(34.5, 1.6, total_budget=1000.0, step_budget=100.0)
    plan = select_random(weak_candidates(5), costs, remaining_budget=500.0,
                         seed=0)
    assert len(plan.upgrades) == 3  # floor(100 / 32.9)
    assert not plan.weak_new


def test_select_random_terminal_when_nothing_affordable():
    plan = select_random(unlabeled_candidates(4), HIGH_COSTS,
                         remaining_budget=1.0, seed=0)
    assert plan.is_empty and TERMINAL_FLAG in plan.flags


def test_select_random_strong_only():
    plan = select_random(unlabeled_candidates(10), HIGH_COSTS,
                         remaining_budget=500.0, seed=3, strong_only=True)
    assert len(plan.strong_new) == 5  # floor(172.5 / 34.5)
    assert not plan.weak_new and not plan.upgrades


def test_select_random_seed_determinism():
    first = select_random(unlabeled_candidates(30), HIGH_COSTS, 80.0, seed=5)
    second = select_random(unlabeled_candidates(30), HIGH_COSTS, 80.0, seed=5)
    assert first == second


def test_select_uncertainty_descending_and_ascending():
    cands = [("a", 0), ("b", 0), ("c", 0)]
    scores = {"a": 0.1, "b": 0.9, "c": 0.5}
    costs = make_cost_model(10.0, 1.6, total_budget=100.0, step_budget=11.0)
    plan = select_uncertainty(cands, scores, DESCENDING, costs,
                              remaining_budget=3.2)
    assert plan.weak_new == frozenset({"b", "c"})
    plan = select_uncertainty(cands, scores, ASCENDING, costs,
                              remaining_budget=3.2)
    assert plan.weak_new == frozenset({"a", "c"})


def test_select_uncertainty_ties_break_by_id():
    cands = [("d", 0), ("b", 0), ("a", 0), ("c", 0)]
    scores = {i: 0.7 for i, _ in cands}
    costs = make_cost_model(10.0, 1.6, total_budget=100.0, step_budget=11.0)
    plan = select_uncertainty(cands, scores, DESCENDING, costs,
                              remaining_budget=3.2)
    assert plan.weak_new == frozenset({"a", "b"})


def test_select_uncertainty_scale_invariant():
    rng = np.random.default_rng(0)
    cands = unlabeled_candidates(12) + weak_candidates(4)
    scores = {i: float(rng.uniform(0, 2)) for i, _ in cands}
    doubled = {i: 2 * v for i, v in scores.items()}
    one = select_uncertainty(cands, scores, DESCENDING, HIGH_COSTS, 120.0)
    two = select_uncertainty(cands, doubled, DESCENDING, HIGH_COSTS, 120.0)
    assert one == two


def test_build_objective_us_median_pivot():
    cands = [("a", 0), ("b", 0), ("c", 1)]
    coeffs = build_objective_us(cands, {"a": 1.0, "b": 2.0, "c": 3.0})
    assert coeffs.pivot == 2.0
    assert coeffs.weak_gain.tolist() == [1.0, 0.0, -1.0]
    assert coeffs.strong_gain.tolist() == [1.0, 2.0, 3.0]
    assert coeffs.upgrade_gain.tolist() == [1.0, 2.0, 3.0]


def test_build_objective_us_degenerate():
    coeffs = build_objective_us([("a", 0)], {"a": 0.7})
    assert coeffs.pivot == pytest.approx(0.7)
    assert coeffs.weak_gain.tolist() == [0.0]
    zeros = build_objective_us([("a", 0), ("b", 1)], {"a": 0.0, "b": 0.0})
    assert not zeros.strong_gain.any() and not zeros.weak_gain.any()


def test_objective_us_strong_minus_weak_increases_with_score():
    rng = np.random.default_rng(1)
    cands = unlabeled_candidates(9)
    scores = {i: float(rng.uniform(0, 3)) for i, _ in cands}
    coeffs = build_objective_us(cands, scores)
    gap = coeffs.strong_gain - coeffs.weak_gain  # = 2 s - pivot
    order = np.argsort(coeffs.strong_gain)
    assert np.all(np.diff(gap[order]) >= -1e-12)


def test_build_objective_lal_passthrough():
    cands = [("a", 0), ("b", 1)]
    coeffs = build_objective_lal(cands, [0.1, -0.2], [0.2, 0.05])
    assert coeffs.weak_gain.tolist() == [0.1, -0.2]
    assert coeffs.strong_gain.tolist() == [0.2, 0.05]
    assert coeffs.upgrade_gain.tolist() == [0.2, 0.05]
    with pytest.raises(ValueError):
        build_objective_lal(cands, [0.1], [0.2, 0.05])


def test_lp_all_weak_candidates_forces_upgrades():
    cands = weak_candidates(6)
    scores = {i: float(k) for k, (i, _) in enumerate(cands)}
    coeffs = build_objective_us(cands, scores)
    frac = solve_relaxed_lp(coeffs, HIGH_COSTS, 100.0)
    assert not frac.x1.any() and not frac.x2.any()
    assert frac.x3.sum() > 0


def test_lp_dominates_integer_optimum_small_instance():
    rng = np.random.default_rng(7)
    costs = make_cost_model(3.0, 1.0, total_budget=1000.0, step_budget=4.0,
                            upgrade_cost=2.0)
    for _ in range(30):
        psi = rng.integers(0, 2, size=3)
        cands = [(f"i{k}", int(p)) for k, p in enumerate(psi)]
        scores = {i: float(rng.uniform(-1, 2)) for i, _ in cands}
        coeffs = build_objective_us(cands, scores)
        frac = solve_relaxed_lp(coeffs, costs, 4.0, lower_bound=1.0)
        best = integer_optimum(coeffs, costs, 4.0, lower_bound=1.0)
        if best is not None:
            assert frac.objective_value >= best - 1e-6


def test_lp_zero_solution_when_gains_negative_and_no_lower_bound():
    cands = unlabeled_candidates(4)
    coeffs = build_objective_lal(cands, [-1.0] * 4, [-2.0] * 4)
    frac = solve_relaxed_lp(coeffs, HIGH_COSTS, 172.5, lower_bound=None)
    assert frac.objective_value == pytest.approx(0.0, abs=1e-9)
    assert not frac.x1.any() and not frac.x2.any() and not frac.x3.any()


def random_feasible_fraction(rng, n):
    """A random fractional point satisfying the exclusivity constraints."""
    psi = rng.integers(0, 2, size=n).astype(float)
    x3 = rng.uniform(0, 1, size=n) * psi
    x1 = rng.uniform(0, 1, size=n) * (1 - psi)
    x2 = rng.uniform(0, 1, size=n) * (1 - psi - x1)
    return psi, FractionalSolution(x1=x1, x2=x2, x3=x3, objective_value=0.0)


def test_threshold_rounding_feasible_for_every_epsilon():
    rng = np.random.default_rng(11)
    for _ in range(400):
        n = int(rng.integers(1, 21))
        psi, frac = random_feasible_fraction(rng, n)
        for eps in epsilon_grid(frac):
            x1 = frac.x1 > eps
            x2 = frac.x2 > 1.0 - eps
            x3 = frac.x3 > eps
            assert np.all(x3 <= psi)
            assert np.all(x1.astype(int) + x2.astype(int) <= 1 - psi)


def test_rounded_objective_never_beats_fractional():
    # Rounding an LP-optimal fraction can only lose objective: the rounded
    # plan is itself feasible, so it cannot exceed the relaxation optimum.
    rng = np.random.default_rng(13)
    solved = 0
    for trial in range(1000):
        n = int(rng.integers(1, 21))
        costs = HIGH_COSTS if trial % 2 == 0 else LOW_COSTS
        psi = rng.integers(0, 2, size=n)
        cands = [(f"i{k:02d}", int(p)) for k, p in enumerate(psi)]
        coeffs = build_objective_lal(cands,
                                     rng.uniform(-1, 1, size=n),
                                     rng.uniform(-1, 1, size=n))
        d = float(rng.uniform(costs.strong_cost * 1.1,
                              costs.strong_cost * 3))
        lower = d - costs.strong_cost
        try:
            frac = solve_relaxed_lp(coeffs, costs, d, lower_bound=lower)
        except Exception:
            continue
        plan = round_solution(frac, coeffs, costs, d, lower_bound=lower)
        value = (coeffs.strong_gain[[c[0] in plan.strong_new for c in cands]].sum()
                 + coeffs.weak_gain[[c[0] in plan.weak_new for c in cands]].sum()
                 + coeffs.upgrade_gain[[c[0] in plan.upgrades for c in cands]].sum())
        assert value <= frac.objective_value + 1e-6
        solved += 1
    assert solved > 800


def test_round_solution_returns_binary_input_unchanged():
    cands = [("a", 0), ("b", 0), ("c", 1)]
    coeffs = build_objective_lal(cands, [0.5, 0.1, 0.0], [0.9, 0.2, 0.8])
    costs = make_cost_model(30.0, 2.0, total_budget=1000.0, step_budget=35.0,
                            upgrade_cost=28.0)
    frac = FractionalSolution(x1=np.array([1.0, 0.0, 0.0]),
                              x2=np.array([0.0, 1.0, 0.0]),
                              x3=np.array([0.0, 0.0, 0.0]),
                              objective_value=1.0)
    plan = round_solution(frac, coeffs, costs, 35.0, lower_bound=5.0)
    assert plan.strong_new == frozenset({"a"})
    assert plan.weak_new == frozenset({"b"})
    assert not plan.upgrades and FALLBACK_FLAG not in plan.flags


def test_select_optimization_empty_candidates_terminal():
    def builder(cands):
        raise AssertionError("must not be called")

    plan = select_optimization([], builder, HIGH_COSTS, 100.0)
    assert plan.is_empty and TERMINAL_FLAG in plan.flags


def test_select_optimization_budget_window():
    rng = np.random.default_rng(3)
    for trial in range(20):
        cands = unlabeled_candidates(5) + weak_candidates(3)
        scores = {i: float(rng.uniform(0, 3)) for i, _ in cands}
        d = HIGH_COSTS.step_budget
        plan = select_optimization(
            cands, lambda c: build_objective_us(c, scores), HIGH_COSTS,
            remaining_budget=1000.0,
            lower_bound=d - HIGH_COSTS.strong_cost)
        cost = plan.cost(HIGH_COSTS)
        assert d - HIGH_COSTS.strong_cost < cost <= d + 1e-9


def test_select_optimization_strong_labels_outlier():
    # One image far more uncertain than the rest must be strong-annotated.
    cands = unlabeled_candidates(4)
    scores = {"u000": 0.1, "u001": 0.12, "u002": 0.15, "u003": 2.9}
    costs = make_cost_model(34.5, 1.6, total_budget=1000.0, step_budget=40.0)
    plan = select_optimization(cands,
                               lambda c: build_objective_us(c, scores),
                               costs, remaining_budget=1000.0,
                               lower_bound=40.0 - 34.5)
    assert "u003" in plan.strong_new
    coeffs = build_objective_us(cands, scores)
    best = integer_optimum(coeffs, costs, 40.0, lower_bound=5.5)
    achieved = (coeffs.strong_gain[[c[0] in plan.strong_new for c in cands]].sum()
                + coeffs.weak_gain[[c[0] in plan.weak_new for c in cands]].sum())
    assert achieved == pytest.approx(best, abs=1e-9)


def test_lp_infeasible_window_is_terminal():
    # Two weak candidates cannot absorb the window's lower edge.
    cands = weak_candidates(2)
    scores = {i: 1.0 for i, _ in cands}
    plan = select_optimization(cands,
                               lambda c: build_objective_us(c, scores),
                               HIGH_COSTS, remaining_budget=1000.0,
                               lower_bound=138.0)
    assert plan.is_empty and TERMINAL_FLAG in plan.flags
