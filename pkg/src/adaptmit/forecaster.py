"""Sparse variational GP forecaster of next-cycle logical fidelity.

The variational posterior is stored whitened: u = L_k v with K_zz = L_k L_k^T and
q(v) = N(q_mu, q_sqrt q_sqrt^T). The unwhitened mean ``m`` and covariance
``S`` are exposed as properties. Inputs are standardised and targets centred
and scaled by their training statistics; the GP itself has zero prior mean
and an RBF kernel with one lengthscale per input dimension.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

logger = logging.getLogger(__name__)

JITTER = 1e-6
NOISE_FLOOR = 1e-6
SCALE_FLOOR = 1e-8
_LOG2PI = math.log(2.0 * math.pi)


class SvgpDivergence(RuntimeError):
    """ELBO or parameters became non-finite during training."""


@dataclass
class KernelParams:
    variance: float
    lengthscales: np.ndarray
    noise: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        if self.variance <= 0 or self.noise <= 0 or np.any(self.lengthscales <= 0):
            raise ValueError("kernel variance, lengthscales and noise must be strictly positive")


def rbf(X1, X2, variance: float, lengthscales) -> np.ndarray:
    A = np.atleast_2d(X1) / lengthscales
    B = np.atleast_2d(X2) / lengthscales
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return variance * np.exp(-0.5 * np.maximum(d2, 0.0))


def kernel_eval(x, x2, params: KernelParams) -> float:
    x, x2 = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(x2, float))
    if x.shape != x2.shape:
        raise ValueError("kernel inputs must have equal dimension")
    return float(params.variance * np.exp(-0.5 * np.sum(((x - x2) / params.lengthscales) ** 2)))


def _gram_cholesky(X, params: KernelParams) -> np.ndarray:
    K = rbf(X, X, params.variance, params.lengthscales) + params.noise * np.eye(len(X))
    try:
        return cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"Gram matrix plus noise is not positive definite: {exc}") from None


def exact_gp_predict(X, y, params: KernelParams, Xq):
    """Posterior mean and predictive variance (noise included) of a zero-mean GP."""
    X, Xq = np.atleast_2d(X), np.atleast_2d(Xq)
    y = np.asarray(y, dtype=np.float64)
    L = _gram_cholesky(X, params)
    alpha = cho_solve((L, True), y)
    Ks = rbf(X, Xq, params.variance, params.lengthscales)
    mean = Ks.T @ alpha
    V = solve_triangular(L, Ks, lower=True)
    var = params.variance - (V * V).sum(0) + params.noise
    return mean, var


def exact_gp_log_evidence(X, y, params: KernelParams) -> float:
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=np.float64)
    L = _gram_cholesky(X, params)
    a = solve_triangular(L, y, lower=True)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * len(y) * _LOG2PI)


# ----------------------------------------------------------------------------- state


@dataclass(frozen=True)
class StateEncoding:
    """How the controller state is turned into a GP input vector."""

    n_contexts: int
    mode: str = "onehot"
    include_distance: bool = True

    def __post_init__(self):
        if self.mode not in ("onehot", "raw"):
            raise ValueError(f"unknown context encoding {self.mode!r}")
        if self.n_contexts < 1:
            raise ValueError("n_contexts must be >= 1")

    @property
    def dim(self) -> int:
        return (self.n_contexts if self.mode == "onehot" else 1) + (4 if self.include_distance else 3)


def build_state(c_t: int, p_eff: float, d: int, t: int, T_run: int, F_L: float, encoding: StateEncoding) -> np.ndarray:
    if encoding.mode == "onehot":
        if not 0 <= c_t < encoding.n_contexts:
            raise ValueError(f"context {c_t} outside the {encoding.n_contexts} known contexts")
        ctx = np.zeros(encoding.n_contexts)
        ctx[c_t] = 1.0
    else:
        ctx = np.array([float(c_t)])
    tail = [p_eff, d, t / T_run, F_L] if encoding.include_distance else [p_eff, t / T_run, F_L]
    return np.concatenate([ctx, np.asarray(tail, dtype=np.float64)])


# ----------------------------------------------------------------------------- model


@dataclass
class Forecast:
    mu_hat: float
    sigma_hat: float
    horizon: int = 1


@dataclass
class SvgpModel:
    Z: np.ndarray
    q_mu: np.ndarray
    q_sqrt: np.ndarray
    log_variance: float
    log_lengthscales: np.ndarray
    log_noise: float
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    jitter: float = JITTER
    meta: dict = field(default_factory=dict)

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(
            math.exp(self.log_variance), np.exp(self.log_lengthscales), math.exp(self.log_noise)
        )

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    def encode_inputs(self, X) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.x_mean) / self.x_std

    def encode_targets(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def _Lk(self) -> np.ndarray:
        k = self.kernel
        Kmm = rbf(self.Z, self.Z, k.variance, k.lengthscales) + self.jitter * np.eye(self.M)
        return cholesky(Kmm, lower=True)

    @property
    def m(self) -> np.ndarray:
        """Unwhitened variational mean of the inducing outputs."""
        return self._Lk() @ self.q_mu

    @property
    def S(self) -> np.ndarray:
        """Unwhitened variational covariance of the inducing outputs."""
        Lk, Lq = self._Lk(), np.tril(self.q_sqrt)
        LL = Lk @ Lq
        return LL @ LL.T

    def predict_latent(self, Xe) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance (noise included) in the encoded target space."""
        k = self.kernel
        Lk = self._Lk()
        A = solve_triangular(Lk, rbf(self.Z, Xe, k.variance, k.lengthscales), lower=True)
        SA = np.tril(self.q_sqrt).T @ A
        mean = A.T @ self.q_mu
        var = np.maximum(k.variance - (A * A).sum(0), 0.0) + (SA * SA).sum(0) + k.noise
        return mean, var

    def to_dict(self) -> dict:
        return {
            "Z": self.Z.tolist(),
            "q_mu": self.q_mu.tolist(),
            "q_sqrt": np.tril(self.q_sqrt).tolist(),
            "log_variance": self.log_variance,
            "log_lengthscales": self.log_lengthscales.tolist(),
            "log_noise": self.log_noise,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "jitter": self.jitter,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SvgpModel":
        arr = lambda k: np.asarray(obj[k], dtype=np.float64)  # noqa: E731
        return cls(
            Z=arr("Z"),
            q_mu=arr("q_mu"),
            q_sqrt=arr("q_sqrt"),
            log_variance=float(obj["log_variance"]),
            log_lengthscales=arr("log_lengthscales"),
            log_noise=float(obj["log_noise"]),
            x_mean=arr("x_mean"),
            x_std=arr("x_std"),
            y_mean=float(obj["y_mean"]),
            y_std=float(obj["y_std"]),
            jitter=float(obj.get("jitter", JITTER)),
            meta=dict(obj.get("meta", {})),
        )


def svgp_predict(model: SvgpModel, x) -> Forecast:
    """Deterministic predictive moments for one raw state vector."""
    mean, var = model.predict_latent(model.encode_inputs(x))
    return Forecast(
        mu_hat=float(model.y_mean + model.y_std * mean[0]),
        sigma_hat=float(model.y_std * math.sqrt(var[0])),
        horizon=int(model.meta.get("horizon", 1)),
    )


def svgp_predict_batch(model: SvgpModel, X) -> tuple[np.ndarray, np.ndarray]:
    mean, var = model.predict_latent(model.encode_inputs(X))
    return model.y_mean + model.y_std * mean, model.y_std * np.sqrt(var)


# ----------------------------------------------------------------------------- ELBO


def _kl_whitened(q_mu: np.ndarray, Lq: np.ndarray) -> float:
    diag = np.diag(Lq)
    return 0.5 * float((Lq * Lq).sum() + q_mu @ q_mu - len(q_mu) - 2.0 * np.log(np.abs(diag)).sum())


def elbo_and_grads(model: SvgpModel, Xe: np.ndarray, ye: np.ndarray, need_grads: bool = True):
    """ELBO on encoded data and its gradients.

    Gradients are returned as a dict keyed ``q_mu``, ``q_sqrt`` (lower
    triangular), ``log_variance``, ``log_lengthscales`` and ``log_noise``.
    """
    var, ls, noise = math.exp(model.log_variance), np.exp(model.log_lengthscales), math.exp(model.log_noise)
    Z, q_mu, Lq = model.Z, model.q_mu, np.tril(model.q_sqrt)
    N, M = Xe.shape[0], Z.shape[0]
    Kmm_nj = rbf(Z, Z, var, ls)
    Lk = cholesky(Kmm_nj + model.jitter * np.eye(M), lower=True)
    Kmn = rbf(Z, Xe, var, ls)
    B = solve_triangular(Lk, Kmn, lower=True)
    SB = Lq.T @ B
    mu = B.T @ q_mu
    r = ye - mu
    fvar = var - (B * B).sum(0) + (SB * SB).sum(0)
    R = float(r @ r + fvar.sum())
    ell = -0.5 * N * (_LOG2PI + model.log_noise) - 0.5 * R / noise
    elbo = ell - _kl_whitened(q_mu, Lq)
    if not need_grads:
        return elbo, None

    g = {}
    g["q_mu"] = B @ r / noise - q_mu
    g["q_sqrt"] = np.tril(-(B @ B.T) @ Lq / noise - Lq + np.diag(1.0 / np.diag(Lq)))
    g["log_noise"] = -0.5 * N + 0.5 * R / noise

    G_B = (np.outer(q_mu, r) + B - (Lq @ SB)) / noise
    Kmn_bar = solve_triangular(Lk, G_B, lower=True, trans="T")
    Lk_bar = np.tril(-Kmn_bar @ B.T)
    P = np.tril(Lk.T @ Lk_bar)
    P[np.diag_indices(M)] *= 0.5
    P = 0.5 * (P + P.T)
    Kmm_bar = solve_triangular(Lk, solve_triangular(Lk, P, lower=True, trans="T").T, lower=True, trans="T")
    Kmm_bar = 0.5 * (Kmm_bar + Kmm_bar.T)
    knn_bar = -0.5 / noise

    W_mn = Kmn_bar * Kmn
    W_mm = Kmm_bar * Kmm_nj
    g["log_variance"] = float(W_mn.sum() + W_mm.sum() + knn_bar * N * var)

    def ls_term(W, X1, X2):
        return W.sum(1) @ (X1 * X1) - 2.0 * (X1 * (W @ X2)).sum(0) + W.sum(0) @ (X2 * X2)

    g["log_lengthscales"] = (ls_term(W_mn, Z, Xe) + ls_term(W_mm, Z, Z)) / (ls * ls)
    return elbo, g


def svgp_elbo(model: SvgpModel, X, y, encoded: bool = False) -> float:
    if not encoded:
        X, y = model.encode_inputs(X), model.encode_targets(y)
    return float(elbo_and_grads(model, np.atleast_2d(X), np.asarray(y, float), need_grads=False)[0])


# ----------------------------------------------------------------------------- training


def kmeans_pp_seeds(X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style selection of ``M`` distinct rows of ``X`` (indices)."""
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(1)
    while len(chosen) < M:
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(N), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    return np.asarray(chosen, dtype=np.int64)


def init_model(X, y, M: int, rng: np.random.Generator, inducing=None, meta: dict | None = None) -> SvgpModel:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    N = X.shape[0]
    if N == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.shape != (N,):
        raise ValueError(f"expected {N} targets, got shape {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training inputs and targets must be finite")
    if not 1 <= M <= N:
        raise ValueError(f"need 1 <= M <= N (got M={M}, N={N})")
    x_mean, x_std = X.mean(0), np.maximum(X.std(0), SCALE_FLOOR)
    y_mean, y_std = float(y.mean()), max(float(y.std()), SCALE_FLOOR)
    Xe = (X - x_mean) / x_std
    if inducing is None:
        Z = Xe[kmeans_pp_seeds(Xe, M, rng)].copy()
    else:
        Z = (np.atleast_2d(np.asarray(inducing, dtype=np.float64)) - x_mean) / x_std
        if Z.shape != (M, X.shape[1]):
            raise ValueError("inducing inputs have the wrong shape")
    return SvgpModel(
        Z=Z,
        q_mu=np.zeros(M),
        q_sqrt=np.eye(M),
        log_variance=0.0,
        log_lengthscales=np.zeros(X.shape[1]),
        log_noise=math.log(0.1),
        x_mean=x_mean,
        x_std=x_std,
        y_mean=y_mean,
        y_std=y_std,
        meta=dict(meta or {}),
    )


def natural_step(model: SvgpModel, Xe: np.ndarray, ye: np.ndarray, gamma: float = 1.0) -> None:
    """Natural-gradient update of q(v) with step ``gamma`` (1.0 = exact optimum)."""
    k = model.kernel
    Lk = cholesky(rbf(model.Z, model.Z, k.variance, k.lengthscales) + model.jitter * np.eye(model.M), lower=True)
    B = solve_triangular(Lk, rbf(model.Z, Xe, k.variance, k.lengthscales), lower=True)
    prec_opt = np.eye(model.M) + B @ B.T / k.noise
    eta_opt = B @ ye / k.noise
    if gamma >= 1.0:
        prec, eta = prec_opt, eta_opt
    else:
        Lq = np.tril(model.q_sqrt)
        Lq_inv = solve_triangular(Lq, np.eye(model.M), lower=True)
        prec_old = Lq_inv.T @ Lq_inv
        prec = (1.0 - gamma) * prec_old + gamma * prec_opt
        eta = (1.0 - gamma) * prec_old @ model.q_mu + gamma * eta_opt
    Lp = cholesky(prec, lower=True)
    model.q_mu = cho_solve((Lp, True), eta)
    # S = prec^{-1} = Lp^{-T} Lp^{-1}; take its lower Cholesky factor
    Lp_inv = solve_triangular(Lp, np.eye(model.M), lower=True)
    model.q_sqrt = cholesky(Lp_inv.T @ Lp_inv, lower=True)


class _Adam:
    def __init__(self, step_size: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.step_size, self.b1, self.b2, self.eps = step_size, b1, b2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def ascend(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for key, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self.b1 * self.m.get(key, 0.0) + (1 - self.b1) * g
            v = self.b2 * self.v.get(key, 0.0) + (1 - self.b2) * g * g
            self.m[key], self.v[key] = m, v
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            out[key] = params[key] + self.step_size * mhat / (np.sqrt(vhat) + self.eps)
        return out


_HYPER = ("log_variance", "log_lengthscales", "log_noise")


def _apply(model: SvgpModel, new: dict) -> None:
    for key, value in new.items():
        if key == "q_sqrt":
            value = np.tril(value)
        if key in ("log_variance", "log_noise"):
            value = float(value)
        setattr(model, key, value)
    model.log_noise = max(model.log_noise, math.log(NOISE_FLOOR))


def svgp_step(model: SvgpModel, Xe, ye, optimizer: _Adam, natgrad: float | None = 1.0) -> float:
    """One training iteration on encoded data; returns the ELBO before the step."""
    if natgrad:
        natural_step(model, Xe, ye, natgrad)
    elbo, g = elbo_and_grads(model, Xe, ye)
    keys = _HYPER if natgrad else _HYPER + ("q_mu", "q_sqrt")
    current = {k: getattr(model, k) for k in keys}
    _apply(model, optimizer.ascend(current, {k: g[k] for k in keys}))
    return elbo


def svgp_train(
    X,
    y,
    M: int = 16,
    iters: int = 2000,
    step_size: float = 0.01,
    rng: np.random.Generator | None = None,
    inducing=None,
    natgrad: float | None = 1.0,
    meta: dict | None = None,
) -> SvgpModel:
    """Fit an SVGP by ELBO ascent.

    Kernel hyperparameters (log space) take Adam steps of fixed size. With
    ``natgrad`` set, q(u) is updated by a natural-gradient step of that size
    each iteration; with ``natgrad=None`` it takes Adam steps on
    ``(q_mu, q_sqrt)`` instead. Inducing inputs are seeded k-means++ style
    from the training inputs unless given and stay fixed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    model = init_model(X, y, M, rng, inducing=inducing, meta=meta)
    Xe, ye = model.encode_inputs(X), model.encode_targets(y)
    opt = _Adam(step_size)
    elbo = float("nan")
    for it in range(iters):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                elbo = svgp_step(model, Xe, ye, opt, natgrad)
        except (np.linalg.LinAlgError, ValueError, OverflowError) as exc:
            elbo = float("nan")
            logger.debug("svgp step %d failed: %s", it, exc)
        if not np.isfinite(elbo) or not np.isfinite(model.log_lengthscales).all():
            raise SvgpDivergence(
                f"non-finite ELBO at iteration {it}: elbo={elbo}, log_variance={model.log_variance}, "
                f"log_noise={model.log_noise}, log_lengthscales={model.log_lengthscales.tolist()}"
            )
    if natgrad:
        natural_step(model, Xe, ye, natgrad)
    model.meta["final_elbo"] = svgp_elbo(model, Xe, ye, encoded=True)
    logger.debug("svgp trained: M=%d iters=%d elbo=%.4f", M, iters, model.meta["final_elbo"])
    return model
