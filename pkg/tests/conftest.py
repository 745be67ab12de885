import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from annobudget import lal, runner
from annobudget.config import default_run_config
from annobudget.detector import make_prediction_set


def small_run_config(policy="rs", seed=0, training="hybrid"):
    """A fast 60-image campaign config for loop-heavy tests."""
    return default_run_config(policy=policy, seed=seed, n_images=60,
                              n_classes=6, training=training)


def random_prediction_set(rng, n_classes=8, max_boxes=8, image_id="img",
                          min_confidence=0.0):
    """Random but invariant-satisfying prediction set."""
    m = int(rng.integers(0, max_boxes + 1))
    boxes = []
    for _ in range(m):
        x0, y0 = rng.uniform(0, 500, size=2)
        w, h = rng.uniform(5, 160, size=2)
        boxes.append((x0, y0, x0 + w, y0 + h))
    probs = rng.dirichlet(np.ones(n_classes) * rng.uniform(0.3, 3.0),
                          size=m) if m else np.zeros((0, n_classes))
    if m and min_confidence > 0:
        # Push each row's peak above the floor so prefilters keep all boxes.
        for row in probs:
            top = row.argmax()
            row[top] = max(row[top], min_confidence + 0.05)
            row /= row.sum()
    return make_prediction_set(image_id, np.asarray(boxes).reshape(m, 4), probs)


@pytest.fixture(scope="session")
def lal_regressors(tmp_path_factory):
    """Gain regressors fitted on a class-disjoint synthetic pool."""
    cfg = small_run_config()
    cfg.pop("policy")
    cfg.pop("seed")
    for key in ("dataset", "eval_dataset"):
        cfg[key]["synthetic"]["classes"] = [f"h{i}" for i in range(6)]
    cfg["eval_classes"] = [f"c{i}" for i in range(6)]
    cfg["policies"] = ["rs", "us"]
    samples = runner.collect_gain_samples(cfg, episodes=12, seed=11)
    out = tmp_path_factory.mktemp("lal")
    paths = {}
    for action_type in ("weak", "strong"):
        regressor = lal.fit(samples, action_type)
        path = out / f"{action_type}.joblib"
        lal.save_regressor(regressor, path)
        paths[action_type] = str(path)
    return paths


@pytest.fixture(scope="session")
def rl_weights(tmp_path_factory):
    """A briefly trained Q-function weights file."""
    from annobudget.policy_rl import RLHyperparams

    cfg = small_run_config(seed=300)
    cfg.pop("policy")
    q, _returns = runner.train_rl_agent(cfg, episodes=2,
                                        hyperparams=RLHyperparams(), seed=13)
    path = tmp_path_factory.mktemp("rl") / "q.json"
    q.to_json(path)
    return str(path)
