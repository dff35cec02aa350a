"""Synthetic problems shared by the unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from adaptmit.plant import ACTIONS
from adaptmit.policy import Bandit, PolicyParams


def stationary_bandit_best_rate(seed: int, rounds: int = 2000, tail: int = 100, dim: int = 4, noise: float = 0.1) -> float:
    """Fraction of the final ``tail`` rounds in which TS picks the best arm.

    Linear true rewards theta_a . z with z = [x, 1], x ~ N(0, I), Gaussian
    reward noise, and no cost penalty.
    """
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(len(ACTIONS), dim + 1))
    bandit = Bandit.fresh(ACTIONS, dim + 1, PolicyParams(lam=0.0))
    policy_rng = np.random.default_rng(seed + 10_000)
    hits = 0
    for t in range(rounds):
        z = np.append(rng.normal(size=dim), 1.0)
        action, _ = bandit.select(z, policy_rng)
        i = bandit.index(action.label)
        means = theta @ z
        r = means[i] + noise * rng.normal()
        bandit.update(action.label, z, r)
        if t >= rounds - tail:
            hits += i == int(np.argmax(means))
    return hits / tail
