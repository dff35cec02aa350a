"""Offline training and online control loops, plus paired strategy comparison.

Timing convention: the decision for cycle ``t`` is made from the telemetry
record of cycle ``t - 1``. Cycle 0 has no observation yet and runs ``NONE``.
The noise proxy fed to the controller is the observed drift knob ``p_phys``
passed through the ``NONE`` effective-rate map, so it does not depend on the
controller's own previous action.
"""
from __future__ import annotations

import hashlib
import json
import logging
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import forecaster as fc
from .config import ExperimentConfig
from .ghsom import GhsomTree, map_context, map_contexts, train_ghsom
from .plant import (
    EXPLORE_STREAM,
    POLICY_STREAM,
    ActionLevel,
    Level,
    RepetitionPlant,
    WorkloadDescriptor,
    action_by_label,
    effective_rate,
    stream_rng,
)
from .policy import Bandit, bandit_context, bootstrap_from_demonstrations, expert_policy, reward
from .telemetry import NormStats, TelemetryRecord, feature_matrix, fit_normalizer

logger = logging.getLogger(__name__)

STRATEGIES = ("unmitigated", "static_severe", "adaptive")


class TrainingError(ValueError):
    pass


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def noise_proxy(record: TelemetryRecord, actions: Sequence[ActionLevel]) -> float:
    return effective_rate(record.p_phys, action_by_label(actions, Level.NONE))


def make_plant(cfg: ExperimentConfig, workload: WorkloadDescriptor) -> RepetitionPlant:
    return RepetitionPlant(cfg.plant_config(), workload, cfg.actions())


# ----------------------------------------------------------------------------- traces


def collect_run(cfg: ExperimentConfig, seed: int, workload: WorkloadDescriptor, behavior: str | None = None) -> list[TelemetryRecord]:
    """One run under the behaviour policy (expert with epsilon-uniform exploration, or uniform)."""
    behavior = behavior or cfg.run.behavior
    actions = cfg.actions()
    pp = cfg.policy_params()
    plant = make_plant(cfg, workload)
    plant.reset(seed)
    rng = stream_rng(seed, EXPLORE_STREAM, _name_key(workload.name))
    records: list[TelemetryRecord] = []
    obs: TelemetryRecord | None = None
    for _ in range(plant.T_run):
        explore = rng.random() < cfg.run.explore
        pick = int(rng.integers(len(actions)))
        if obs is None:
            action = action_by_label(actions, Level.NONE)
        elif behavior == "random" or explore:
            action = actions[pick]
        else:
            action = action_by_label(actions, expert_policy(noise_proxy(obs, actions), pp.expert_lo, pp.expert_hi))
        _, rec = plant.step(action)
        if obs is not None:
            rec.reward = reward(obs.eps_logical, rec.eps_logical, action.cost, pp.lam, pp.reward_mode)
        records.append(rec)
        obs = rec
    return records


def collect_traces(
    cfg: ExperimentConfig,
    seeds: Iterable[int],
    workloads: Sequence[WorkloadDescriptor] | None = None,
    behavior: str | None = None,
) -> list[list[TelemetryRecord]]:
    workloads = list(workloads) if workloads is not None else cfg.workloads()
    return [collect_run(cfg, s, w, behavior) for s in seeds for w in workloads]


def split_runs(records: Sequence[TelemetryRecord]) -> list[list[TelemetryRecord]]:
    """Split a flat record stream into runs at (run, workload) changes or cycle resets."""
    runs: list[list[TelemetryRecord]] = []
    for rec in records:
        if (
            not runs
            or rec.cycle <= runs[-1][-1].cycle
            or rec.run != runs[-1][-1].run
            or rec.workload_name != runs[-1][-1].workload_name
        ):
            runs.append([])
        runs[-1].append(rec)
    return runs


# ----------------------------------------------------------------------------- stack


@dataclass
class TrainedStack:
    tree: GhsomTree
    norm: NormStats
    svgp: fc.SvgpModel
    bandit: Bandit
    encoding: fc.StateEncoding
    config: ExperimentConfig
    delta: int = 1
    meta: dict = field(default_factory=dict)

    def state(self, obs: TelemetryRecord) -> tuple[int, np.ndarray]:
        c = map_context(self.tree, self.norm.normalize(obs.features))
        x = fc.build_state(
            c,
            noise_proxy(obs, self.bandit.actions),
            obs.code_dist,
            obs.cycle,
            self.config.run.T_run,
            obs.fidelity,
            self.encoding,
        )
        return c, x

    def payload(self) -> dict:
        return {
            "ghsom": self.tree.to_dict(),
            "norm_stats": self.norm.to_dict(),
            "svgp": self.svgp.to_dict(),
            "bandit": self.bandit.to_dict(),
            "encoding": {
                "n_contexts": self.encoding.n_contexts,
                "mode": self.encoding.mode,
                "include_distance": self.encoding.include_distance,
            },
            "config": self.config.to_dict(),
            "delta": self.delta,
        }

    def to_json(self, created: str | None = None) -> str:
        payload = self.payload()
        body = json.dumps(payload, sort_keys=True, allow_nan=True)
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        meta = {**self.meta, "content_sha256": digest, "delta": self.delta}
        if created is not None:
            meta["created"] = created
        return json.dumps({"metadata": meta, **payload}, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedStack":
        obj = json.loads(text)
        cfg = ExperimentConfig.from_dict(obj["config"])
        enc = obj["encoding"]
        return cls(
            tree=GhsomTree.from_dict(obj["ghsom"]),
            norm=NormStats.from_dict(obj["norm_stats"]),
            svgp=fc.SvgpModel.from_dict(obj["svgp"]),
            bandit=Bandit.from_dict(obj["bandit"], cfg.policy_params()),
            encoding=fc.StateEncoding(int(enc["n_contexts"]), enc["mode"], bool(enc["include_distance"])),
            config=cfg,
            delta=int(obj["delta"]),
            meta={k: v for k, v in obj.get("metadata", {}).items() if k not in ("created",)},
        )


def svgp_pairs(runs, states_per_run, delta: int):
    """(x_t, F_{t+delta}) pairs; the last ``delta`` cycles of every run are dropped."""
    X, y = [], []
    for recs, states in zip(runs, states_per_run):
        for t in range(len(recs) - delta):
            X.append(states[t])
            y.append(recs[t + delta].fidelity)
    return np.asarray(X), np.asarray(y)


def train_offline(runs: Sequence[Sequence[TelemetryRecord]], cfg: ExperimentConfig, delta: int | None = None) -> TrainedStack:
    """Fit normaliser, context map, forecaster and bandit priors on stored traces."""
    delta = cfg.svgp.delta if delta is None else delta
    runs = [list(r) for r in runs if len(r) > 0]
    if not runs:
        raise TrainingError("no trace records to train on")
    if all(len(r) < delta + 1 for r in runs):
        raise TrainingError(f"every run is shorter than delta + 1 = {delta + 1} cycles")
    actions = cfg.actions()
    pp = cfg.policy_params()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run.train_base_seed, 0xC0FFEE]))

    # 1) contexts
    flat = [r for run in runs for r in run]
    F = feature_matrix(flat)
    norm = fit_normalizer(F, cfg.telemetry.std_floor)
    tree = train_ghsom(norm.normalize(F), cfg.som_params(), rng=rng, norm_stats=norm)
    contexts = map_contexts(tree, norm.normalize(F))
    encoding = fc.StateEncoding(tree.n_contexts, cfg.svgp.encoding, cfg.svgp.include_distance)

    # 2) forecaster
    states_per_run, k = [], 0
    for run in runs:
        states = []
        for rec in run:
            states.append(
                fc.build_state(
                    int(contexts[k]), noise_proxy(rec, actions), rec.code_dist, rec.cycle, cfg.run.T_run, rec.fidelity, encoding
                )
            )
            k += 1
        states_per_run.append(states)
    X, y = svgp_pairs(runs, states_per_run, delta)
    M = min(cfg.svgp.M, len(y))
    model = fc.svgp_train(
        X,
        y,
        M=M,
        iters=cfg.svgp.iters,
        step_size=cfg.svgp.step_size,
        rng=rng,
        natgrad=cfg.svgp.natgrad or None,
        meta={"horizon": delta, "n_train": int(len(y))},
    )

    # 3) bandit priors from the demonstrated (observation, next action, reward) triples
    dim = encoding.dim + 3
    bandit = Bandit.fresh(actions, dim, pp)
    demos = []
    for run, states in zip(runs, states_per_run):
        if len(run) < 2:
            continue
        mu, sigma = fc.svgp_predict_batch(model, np.asarray(states[:-1]))
        for t in range(len(run) - 1):
            nxt = run[t + 1]
            action = action_by_label(actions, nxt.action_level)
            r = reward(run[t].eps_logical, nxt.eps_logical, action.cost, pp.lam, pp.reward_mode)
            demos.append((bandit_context(states[t], mu[t], sigma[t]), action.label, r))
    bootstrap_from_demonstrations(demos, bandit)
    logger.info(
        "trained stack: %d records, %d contexts, %d svgp pairs, %d demonstrations",
        len(flat), tree.n_contexts, len(y), len(demos),
    )
    return TrainedStack(
        tree=tree,
        norm=norm,
        svgp=model,
        bandit=bandit,
        encoding=encoding,
        config=cfg,
        delta=delta,
        meta={"n_records": len(flat), "n_contexts": tree.n_contexts, "n_pairs": int(len(y)), "n_demos": len(demos)},
    )


# ----------------------------------------------------------------------------- runs


@dataclass
class RunLog:
    strategy: str
    seed: int
    workload: str
    records: list[TelemetryRecord]
    actions: tuple[ActionLevel, ...]

    @property
    def total_cost(self) -> float:
        return float(sum(action_by_label(self.actions, r.action_level).cost for r in self.records))

    @property
    def action_histogram(self) -> dict[str, int]:
        counts = Counter(r.action_level for r in self.records)
        return {a.label.value: counts.get(a.label.value, 0) for a in self.actions}

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean([r.fidelity for r in self.records]))


def run_baseline(cfg: ExperimentConfig, seed: int, workload: WorkloadDescriptor, action) -> RunLog:
    """Apply one fixed action every cycle."""
    actions = cfg.actions()
    pp = cfg.policy_params()
    action = action if isinstance(action, ActionLevel) else action_by_label(actions, action)
    plant = make_plant(cfg, workload)
    plant.reset(seed)
    records, prev = [], None
    for _ in range(plant.T_run):
        _, rec = plant.step(action)
        if prev is not None:
            rec.reward = reward(prev.eps_logical, rec.eps_logical, action.cost, pp.lam, pp.reward_mode)
        records.append(rec)
        prev = rec
    name = "unmitigated" if action.label is Level.NONE else f"static_{action.label.value.lower()}"
    return RunLog(name, seed, workload.name, records, actions)


def run_online(stack: TrainedStack, cfg: ExperimentConfig, seed: int, workload: WorkloadDescriptor) -> RunLog:
    """Observe, contextualise, forecast, decide and act for ``T_run`` cycles.

    The bandit starts from a copy of the stack's priors and is updated after
    every decided cycle; the context map and forecaster stay frozen.
    """
    pp = cfg.policy_params()
    bandit = stack.bandit.copy()
    bandit.params = pp
    actions = bandit.actions
    plant = make_plant(cfg, workload)
    plant.reset(seed)
    rng = stream_rng(seed, POLICY_STREAM, _name_key(workload.name))
    records: list[TelemetryRecord] = []
    obs: TelemetryRecord | None = None
    for _ in range(plant.T_run):
        if obs is None:
            action, z = action_by_label(actions, Level.NONE), None
        else:
            c, x = stack.state(obs)
            f = fc.svgp_predict(stack.svgp, x)
            z = bandit_context(x, f.mu_hat, f.sigma_hat)
            action, _ = bandit.select(z, rng)
        _, rec = plant.step(action)
        if obs is not None and z is not None:
            r = reward(obs.eps_logical, rec.eps_logical, action.cost, pp.lam, pp.reward_mode)
            bandit.update(action.label, z, r)
            rec.reward, rec.context = r, c
            rec.forecast_mu, rec.forecast_sigma = f.mu_hat, f.sigma_hat
        records.append(rec)
        obs = rec
    return RunLog("adaptive", seed, workload.name, records, actions)


# ----------------------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    rows: list[dict]
    per_run: list[dict]
    cost_adaptive: float
    cost_static: float
    cost_reduction: float
    none_fraction: float
    severe_fraction: float
    runs: list[tuple[RunLog, RunLog, RunLog]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "per_run": self.per_run,
            "cost_adaptive": self.cost_adaptive,
            "cost_static_severe": self.cost_static,
            "cost_reduction": self.cost_reduction,
            "none_fraction": self.none_fraction,
            "severe_fraction": self.severe_fraction,
        }


def gain_pct(f_unmitigated: float, f_adaptive: float) -> float:
    return 100.0 * (f_adaptive / f_unmitigated - 1.0)


def paired_comparison(
    stack: TrainedStack,
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    workloads: Sequence[WorkloadDescriptor] | None = None,
    workers: int = 1,
) -> ComparisonReport:
    """Run unmitigated, static-severe and adaptive on identical drift realisations.

    Each (workload, seed) triple is independent, so ``workers > 1`` runs them
    on a thread pool; results are collected in input order and are identical
    to the sequential ones.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    workloads = list(workloads) if workloads is not None else cfg.workloads()
    severe = action_by_label(cfg.actions(), Level.SEVERE)

    def triple(job):
        w, s = job
        return run_baseline(cfg, s, w, Level.NONE), run_baseline(cfg, s, w, severe), run_online(stack, cfg, s, w)

    jobs = [(w, s) for w in workloads for s in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(triple, jobs))
    else:
        runs = [triple(j) for j in jobs]
    per_run = []
    for (w, s), (u, st, a) in zip(jobs, runs):
        per_run.append(
            {
                "workload": w.name,
                "family": w.family,
                "seed": s,
                "F_unmitigated": u.mean_fidelity,
                "F_static_severe": st.mean_fidelity,
                "F_adaptive": a.mean_fidelity,
                "cost_adaptive": a.total_cost,
                "cost_static_severe": st.total_cost,
                "actions": a.action_histogram,
            }
        )
    rows = []
    for w in workloads:
        mine = [r for r in per_run if r["workload"] == w.name]
        fu = float(np.mean([r["F_unmitigated"] for r in mine]))
        fa = float(np.mean([r["F_adaptive"] for r in mine]))
        rows.append({"class": w.family, "benchmark": w.name, "unmitigated": fu, "adaptive": fa, "gain_pct": gain_pct(fu, fa)})
    cost_a = float(sum(r["cost_adaptive"] for r in per_run))
    cost_s = float(sum(r["cost_static_severe"] for r in per_run))
    n_cycles = sum(len(a.records) for _, _, a in runs)
    hist = Counter()
    for _, _, a in runs:
        hist.update(a.action_histogram)
    return ComparisonReport(
        rows=rows,
        per_run=per_run,
        cost_adaptive=cost_a,
        cost_static=cost_s,
        cost_reduction=1.0 - cost_a / cost_s if cost_s > 0 else 0.0,
        none_fraction=hist[Level.NONE.value] / n_cycles,
        severe_fraction=hist[Level.SEVERE.value] / n_cycles,
        runs=runs,
    )
