"""Q-learning selection agent over a 3x2 action space.

The agent picks a difficulty preference (uncertainty tercile of the current
candidate pool) and an annotation type; the choice is materialized as a
selection plan that fills the step budget window from that tercile.  The
Q-function is a small one-hidden-layer network over the model state
concatenated with a one-hot action encoding, trained by temporal-difference
updates on per-step mAP increments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import BUDGET_EPS, CostModel, SelectionPlan
from .selection import TERMINAL_FLAG

DIFFICULTIES = ("low", "medium", "high")
ANNOTATIONS = ("weak", "strong")
N_ACTIONS = len(DIFFICULTIES) * len(ANNOTATIONS)

TERCILE_FALLBACK_FLAG = "tercile_fallback"


@dataclass(frozen=True)
class RLAction:
    difficulty: str
    annotation: str

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")
        if self.annotation not in ANNOTATIONS:
            raise ValueError(f"unknown annotation {self.annotation!r}")

    @property
    def index(self) -> int:
        return (DIFFICULTIES.index(self.difficulty) * len(ANNOTATIONS)
                + ANNOTATIONS.index(self.annotation))

    @classmethod
    def from_index(cls, index: int) -> "RLAction":
        return cls(difficulty=DIFFICULTIES[index // len(ANNOTATIONS)],
                   annotation=ANNOTATIONS[index % len(ANNOTATIONS)])


class QFunction:
    """One-hidden-layer tanh network: (state, action one-hot) -> value."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = float(b2)

    @classmethod
    def initialize(cls, state_dim, hidden=32, seed=0, scale=0.1) -> "QFunction":
        rng = np.random.default_rng(seed)
        in_dim = state_dim + N_ACTIONS
        return cls(w1=rng.uniform(-scale, scale, size=(in_dim, hidden)),
                   b1=np.zeros(hidden),
                   w2=rng.uniform(-scale, scale, size=hidden),
                   b2=0.0)

    @property
    def state_dim(self) -> int:
        return self.w1.shape[0] - N_ACTIONS

    def _input(self, state, action_index):
        encoding = np.zeros(N_ACTIONS)
        encoding[action_index] = 1.0
        return np.concatenate([np.asarray(state, dtype=float), encoding])

    def value(self, state, action_index) -> float:
        x = self._input(state, action_index)
        hidden = np.tanh(x @ self.w1 + self.b1)
        return float(hidden @ self.w2 + self.b2)

    def values(self, state) -> np.ndarray:
        return np.array([self.value(state, i) for i in range(N_ACTIONS)])

    def gradient_step(self, state, action_index, target, lr) -> None:
        x = self._input(state, action_index)
        pre = x @ self.w1 + self.b1
        hidden = np.tanh(pre)
        prediction = float(hidden @ self.w2 + self.b2)
        error = prediction - target
        grad_hidden = error * self.w2 * (1.0 - hidden ** 2)
        self.w2 -= lr * error * hidden
        self.b2 -= lr * error
        self.w1 -= lr * np.outer(x, grad_hidden)
        self.b1 -= lr * grad_hidden

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"w1": self.w1.tolist(), "b1": self.b1.tolist(),
                       "w2": self.w2.tolist(), "b2": self.b2},
                      fh, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "QFunction":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(w1=raw["w1"], b1=raw["b1"], w2=raw["w2"], b2=raw["b2"])


def q_update(q: QFunction, transition, lr, gamma) -> QFunction:
    """One TD step toward reward + gamma * max_a' Q(next_state, a').

    transition = (state, action, reward, next_state, terminal); the target
    is just the reward on terminal transitions.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    state, action, reward, next_state, terminal = transition
    target = float(reward)
    if not terminal:
        target += gamma * float(q.values(next_state).max())
    q.gradient_step(state, action.index if isinstance(action, RLAction)
                    else int(action), target, lr)
    return q


def _terciles(candidates, scores):
    """Split candidates into low/medium/high uncertainty thirds (id ties)."""
    ordered = sorted(candidates, key=lambda c: (scores[c[0]], c[0]))
    parts = np.array_split(np.arange(len(ordered)), 3)
    return {DIFFICULTIES[i]: [ordered[j] for j in part]
            for i, part in enumerate(parts)}


def _fill_from_groups(groups, annotation, costs: CostModel, budget_cap,
                      window_low=0.0):
    """Fill the step from the preferred tercile outward, id order inside.

    A weak preference consumes unlabeled images first, spills into upgrades
    once none are left, and finally promotes weak picks to strong while the
    spend sits below the window's lower edge (the step must use its budget
    while affordable actions remain).  Anything taken outside the preferred
    tercile and pass flags the plan.
    """
    spend = 0.0
    strong_new, weak_new, upgrades = [], [], []
    outside_preferred = False
    if annotation == "weak":
        passes = [("weak",), ("upgrade",)]
    else:
        passes = [("strong", "upgrade")]
    for pass_index, kinds in enumerate(passes):
        for rank, members in enumerate(groups):
            for image_id, psi in sorted(members):
                if psi == 0 and "weak" in kinds:
                    cost, bucket = costs.weak_cost, weak_new
                elif psi == 0 and "strong" in kinds:
                    cost, bucket = costs.strong_cost, strong_new
                elif psi == 1 and "upgrade" in kinds:
                    cost, bucket = costs.upgrade_cost, upgrades
                else:
                    continue
                if spend + cost > budget_cap + BUDGET_EPS:
                    continue
                bucket.append(image_id)
                spend += cost
                if rank > 0 or pass_index > 0:
                    outside_preferred = True
    promotion = costs.strong_cost - costs.weak_cost
    while (weak_new and spend <= window_low + BUDGET_EPS
           and spend + promotion <= budget_cap + BUDGET_EPS):
        strong_new.append(weak_new.pop(0))
        spend += promotion
        outside_preferred = True
    plan = SelectionPlan(strong_new=frozenset(strong_new),
                         weak_new=frozenset(weak_new),
                         upgrades=frozenset(upgrades))
    if outside_preferred and not plan.is_empty:
        plan = plan.with_flag(TERCILE_FALLBACK_FLAG)
    return plan


def plan_for_action(action: RLAction, candidates, scores, costs: CostModel,
                    remaining_budget) -> SelectionPlan:
    """Materialize a (difficulty, annotation) choice as a selection plan."""
    if not candidates:
        return SelectionPlan(flags=(TERMINAL_FLAG,))
    budget_cap = min(costs.step_budget, remaining_budget)
    window_low = costs.step_budget - costs.strong_cost \
        if remaining_budget >= costs.step_budget - BUDGET_EPS else 0.0
    terciles = _terciles(candidates, scores)
    preferred = DIFFICULTIES.index(action.difficulty)
    order = sorted(range(3), key=lambda i: (abs(i - preferred), i))
    groups = [terciles[DIFFICULTIES[i]] for i in order]
    plan = _fill_from_groups(groups, action.annotation, costs, budget_cap,
                             window_low=window_low)
    if plan.is_empty:
        plan = plan.with_flag(TERMINAL_FLAG)
    return plan


def rl_select(q: QFunction, state, epsilon, candidates, scores,
              costs: CostModel, remaining_budget, seed):
    """Epsilon-greedy action choice materialized as a selection plan.

    The chosen tercile is consumed first; neighbouring terciles are used
    (and flagged) when the preferred one is empty or cannot fill the step.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if rng.random() < epsilon:
        action = RLAction.from_index(int(rng.integers(N_ACTIONS)))
    else:
        action = RLAction.from_index(int(np.argmax(q.values(state))))
    return action, plan_for_action(action, candidates, scores, costs,
                                   remaining_budget)


@dataclass(frozen=True)
class RLHyperparams:
    hidden: int = 32
    lr: float = 0.01
    gamma: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05


def train_agent(env_factory, episodes, hyperparams: RLHyperparams, seed,
                q: QFunction | None = None):
    """Episodic Q-learning over simulator environments.

    env_factory(episode_seed) must return an object with reset() -> state
    and step(action) -> (next_state, reward, done).  Returns the trained
    Q-function and the per-episode returns.
    """
    returns = []
    rng = np.random.default_rng(seed)
    if q is None:
        probe_state = env_factory(0).reset()
        q = QFunction.initialize(len(probe_state), hidden=hyperparams.hidden,
                                 seed=seed)
    for episode in range(episodes):
        env = env_factory(int(rng.integers(2 ** 31)))
        state = env.reset()
        frac = episode / max(episodes - 1, 1)
        epsilon = (hyperparams.epsilon_start
                   + frac * (hyperparams.epsilon_end - hyperparams.epsilon_start))
        episode_return = 0.0
        done = False
        while not done:
            if rng.random() < epsilon:
                action = RLAction.from_index(int(rng.integers(N_ACTIONS)))
            else:
                action = RLAction.from_index(int(np.argmax(q.values(state))))
            next_state, reward, done = env.step(action)
            q_update(q, (state, action, reward, next_state, done),
                     hyperparams.lr, hyperparams.gamma)
            episode_return += reward
            state = next_state
        returns.append(episode_return)
    return q, returns
