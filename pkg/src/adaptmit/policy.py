"""Cost-aware Thompson sampling over per-action Bayesian linear reward models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .plant import ActionLevel, Level


@dataclass
class PolicyParams:
    lam: float = 0.05
    v: float = 0.25
    reward_mode: str = "error_delta"
    deterministic: bool = False
    sampling: str = "weights"
    prior_scale: float = 1.0
    expert_lo: float = 0.005
    expert_hi: float = 0.02

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.v <= 0:
            raise ValueError("v must be positive")
        if self.reward_mode not in ("error_delta", "fidelity"):
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")
        if self.sampling not in ("weights", "value"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.prior_scale <= 0:
            raise ValueError("prior_scale must be positive")
        if not self.expert_lo < self.expert_hi:
            raise ValueError("expert thresholds need lo < hi")


class ActionModel:
    """Ridge-regression posterior: precision ``A`` and moment vector ``b``."""

    def __init__(self, dim: int, prior_scale: float = 1.0):
        self.A = prior_scale * np.eye(dim)
        self.b = np.zeros(dim)
        self.count = 0
        self._chol: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            try:
                self._chol = cholesky(self.A, lower=True)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"precision matrix is not positive definite: {exc}") from None
        return self._chol

    def theta_hat(self) -> np.ndarray:
        return cho_solve((self.cholesky(), True), self.b)

    def update(self, z, r: float) -> None:
        if not math.isfinite(r):
            raise ValueError(f"reward must be finite, got {r}")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.b.shape:
            raise ValueError(f"context has dimension {z.size}, model expects {self.dim}")
        self.A += np.outer(z, z)
        self.b += r * z
        self.count += 1
        self._chol = None

    def copy(self) -> "ActionModel":
        new = ActionModel.__new__(ActionModel)
        new.A, new.b, new.count, new._chol = self.A.copy(), self.b.copy(), self.count, None
        return new

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ActionModel":
        new = cls.__new__(cls)
        new.A = np.asarray(obj["A"], dtype=np.float64)
        new.b = np.asarray(obj["b"], dtype=np.float64)
        new.count = int(obj["count"])
        new._chol = None
        return new


def posterior(model: ActionModel, v: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean A^-1 b and covariance v^2 A^-1."""
    L = model.cholesky()
    A_inv = cho_solve((L, True), np.eye(model.dim))
    return cho_solve((L, True), model.b), v * v * A_inv


def update(model: ActionModel, z, r: float) -> ActionModel:
    model.update(z, r)
    return model


def bandit_context(state, mu_hat: float, sigma_hat: float) -> np.ndarray:
    """z = [state, forecast mean, forecast std, 1]."""
    return np.concatenate([np.asarray(state, dtype=np.float64), [mu_hat, sigma_hat, 1.0]])


def _penalty(lam: float, cost: float) -> float:
    # 0 * inf must stay 0 so a zero-cost action survives lam = inf
    return lam * cost if cost else 0.0


def ts_select(
    z,
    models: Sequence[ActionModel],
    costs: Sequence[float],
    lam: float,
    rng: np.random.Generator | None = None,
    v: float = 0.25,
    deterministic: bool = False,
    sampling: str = "weights",
) -> tuple[int, np.ndarray]:
    """Thompson-sampling choice of action index and the sampled values.

    ``sampling="weights"`` draws theta ~ N(theta_hat, v^2 A^-1) per action;
    ``"value"`` draws the scalar value ~ N(theta_hat^T z, v^2) instead.
    Ties in penalised value go to the cheaper action, then the lower index.
    """
    z = np.asarray(z, dtype=np.float64)
    values = np.empty(len(models))
    for i, model in enumerate(models):
        if model.dim != z.size:
            raise ValueError(f"context has dimension {z.size}, model {i} expects {model.dim}")
        L = model.cholesky()
        theta = cho_solve((L, True), model.b)
        if not deterministic:
            if rng is None:
                raise ValueError("stochastic selection needs an rng")
            if sampling == "weights":
                theta = theta + v * solve_triangular(L, rng.standard_normal(model.dim), lower=True, trans="T")
                values[i] = theta @ z
            else:
                values[i] = theta @ z + v * rng.standard_normal()
        else:
            values[i] = theta @ z
    utility = np.array([values[i] - _penalty(lam, costs[i]) for i in range(len(models))])
    best = np.flatnonzero(utility == utility.max())
    choice = min(best, key=lambda i: (costs[i], i))
    return int(choice), values


def reward(
    eps_t: float,
    eps_next: float,
    cost: float,
    lam: float,
    mode: str = "error_delta",
) -> float:
    """Realised reward of an action.

    ``error_delta``: (eps_t - eps_next) - lam * cost.
    ``fidelity``: (1 - eps_next) - lam * cost.
    """
    if mode == "error_delta":
        return (eps_t - eps_next) - _penalty(lam, cost)
    if mode == "fidelity":
        return (1.0 - eps_next) - _penalty(lam, cost)
    raise ValueError(f"unknown reward mode {mode!r}")


def expert_policy(p_proxy: float, lo: float = 0.005, hi: float = 0.02) -> Level:
    if not lo < hi:
        raise ValueError("expert thresholds need lo < hi")
    if p_proxy < lo:
        return Level.NONE
    if p_proxy < hi:
        return Level.MODERATE
    return Level.SEVERE


@dataclass
class Bandit:
    """One ActionModel per action level, in library order."""

    actions: tuple[ActionLevel, ...]
    models: list[ActionModel]
    params: PolicyParams = field(default_factory=PolicyParams)

    @classmethod
    def fresh(cls, actions: Sequence[ActionLevel], dim: int, params: PolicyParams | None = None) -> "Bandit":
        params = params or PolicyParams()
        return cls(tuple(actions), [ActionModel(dim, params.prior_scale) for _ in actions], params)

    @property
    def costs(self) -> list[float]:
        return [a.cost for a in self.actions]

    def index(self, label) -> int:
        label = Level(label)
        for i, a in enumerate(self.actions):
            if a.label is label:
                return i
        raise KeyError(label)

    def select(self, z, rng: np.random.Generator | None = None) -> tuple[ActionLevel, np.ndarray]:
        p = self.params
        i, values = ts_select(z, self.models, self.costs, p.lam, rng, p.v, p.deterministic, p.sampling)
        return self.actions[i], values

    def update(self, label, z, r: float) -> None:
        self.models[self.index(label)].update(z, r)

    def copy(self) -> "Bandit":
        return Bandit(self.actions, [m.copy() for m in self.models], self.params)

    def to_dict(self) -> dict:
        return {
            "actions": [{"label": a.label.value, "scale": a.scale, "cost": a.cost} for a in self.actions],
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, obj: Mapping, params: PolicyParams) -> "Bandit":
        actions = tuple(ActionLevel(Level(a["label"]), float(a["scale"]), float(a["cost"])) for a in obj["actions"])
        return cls(actions, [ActionModel.from_dict(m) for m in obj["models"]], params)


def bootstrap_from_demonstrations(traces: Iterable[tuple], bandit: Bandit) -> Bandit:
    """Apply each demonstrated ``(z, action_label, reward)`` to that action's model."""
    for z, label, r in traces:
        bandit.update(label, z, r)
    return bandit
