"""Repetition-code memory under drifting bit-flip noise.

The encoded state |b>^d followed by an independent X channel on each qubit and
a computational-basis measurement is sampled exactly as d independent
Bernoulli(p_eff) flips per shot, so no quantum simulator is needed.

Randomness is split into named streams keyed by ``(seed, stream, cycle)``:
drift noise, the true logical bit and shot sampling never share a generator,
so two runs that differ only in their actions see the same drift realisation.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import comb

from . import kernels
from .telemetry import DEFAULT_WINDOW, TelemetryRecord, build_features, histogram_entropy

VALID_DISTANCES = (1, 3, 5)
P_EFF_CLIP = (1e-5, 0.5)

# stream tags for SeedSequence entropy
DRIFT_STREAM = 1
BIT_STREAM = 2
SHOT_STREAM = 3
POLICY_STREAM = 4
EXPLORE_STREAM = 5


class EndOfRun(RuntimeError):
    """Raised when stepping a plant whose horizon is exhausted."""


def stream_rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), *map(int, key)]))


@dataclass(frozen=True)
class DriftParams:
    """Bounded sinusoidal drift around ``p_phys0``.

    ``schedule="peak"`` adds a mid-run noise peak: the multiplier rises
    linearly from ``peak_start`` to ``peak_center`` (fractions of the run) and
    then relaxes exponentially with time constant ``peak_decay``.
    """

    p_phys0: float = 0.01
    T_run: int = 200
    alpha: float = 0.5
    noise_sigma: float = 0.0
    mode: str = "deterministic"
    clip_lo: float = 1e-4
    clip_hi: float = 0.5
    schedule: str = "sinusoid"
    peak_height: float = 2.0
    peak_start: float = 0.3
    peak_center: float = 0.5
    peak_decay: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.clip_lo < self.clip_hi <= 0.5:
            raise ValueError("need 0 < clip_lo < clip_hi <= 0.5")
        if not 0.0 < self.p_phys0 <= self.clip_hi:
            raise ValueError("need 0 < p_phys0 <= clip_hi")
        if self.T_run < 2:
            raise ValueError("T_run must be >= 2")
        if self.alpha < 0 or self.noise_sigma < 0:
            raise ValueError("alpha and noise_sigma must be non-negative")
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        if self.schedule not in ("sinusoid", "peak"):
            raise ValueError(f"unknown drift schedule {self.schedule!r}")
        if self.schedule == "peak":
            if not 0.0 <= self.peak_start < self.peak_center <= 1.0:
                raise ValueError("need 0 <= peak_start < peak_center <= 1")
            if self.peak_decay <= 0 or self.peak_height < 0:
                raise ValueError("peak_decay must be positive and peak_height non-negative")


class Level(str, enum.Enum):
    NONE = "NONE"
    MODERATE = "MODERATE"
    SEVERE = "SEVERE"


@dataclass(frozen=True)
class ActionLevel:
    label: Level
    scale: float
    cost: float


DEFAULT_SCALES = {Level.NONE: 1.0, Level.MODERATE: 0.7, Level.SEVERE: 0.3}
DEFAULT_COSTS = {Level.NONE: 0.0, Level.MODERATE: 0.3, Level.SEVERE: 1.0}


def make_actions(
    scales: Mapping[Level, float] | None = None, costs: Mapping[Level, float] | None = None
) -> tuple[ActionLevel, ...]:
    """Build the ordered (NONE, MODERATE, SEVERE) library and check its ordering."""
    scales = {**DEFAULT_SCALES, **(scales or {})}
    costs = {**DEFAULT_COSTS, **(costs or {})}
    actions = tuple(ActionLevel(lv, float(scales[lv]), float(costs[lv])) for lv in Level)
    if actions[0].scale != 1.0 or actions[0].cost != 0.0:
        raise ValueError("NONE must have scale 1.0 and cost 0")
    for weaker, stronger in zip(actions, actions[1:]):
        if not stronger.scale < weaker.scale or not stronger.cost > weaker.cost:
            raise ValueError("stronger levels need strictly smaller scale and strictly larger cost")
    for a in actions:
        if not 0.0 < a.scale <= 1.0 or not 0.0 <= a.cost <= 1.0:
            raise ValueError(f"{a.label.value}: scale must be in (0, 1] and cost in [0, 1]")
    return actions


ACTIONS = make_actions()


def action_by_label(actions: Sequence[ActionLevel], label) -> ActionLevel:
    label = Level(label)
    for a in actions:
        if a.label is label:
            return a
    raise KeyError(label)


@dataclass(frozen=True)
class WorkloadDescriptor:
    name: str
    n_qubits: int
    depth: int
    gate_count: int
    t_count: int = 0
    two_qubit_count: int = 0
    family: str = "Clifford"

    def __post_init__(self):
        if self.n_qubits < 1 or self.depth < 1:
            raise ValueError("n_qubits and depth must be positive")
        if self.gate_count < self.depth:
            raise ValueError("gate_count must be >= depth")
        if not 0 <= self.t_count <= self.gate_count or not 0 <= self.two_qubit_count <= self.gate_count:
            raise ValueError("t_count and two_qubit_count must lie in [0, gate_count]")
        if self.family not in ("Clifford", "NonClifford", "Structured"):
            raise ValueError(f"unknown workload family {self.family!r}")


# Gate counts are sized so that 1 - (1 - 0.01)^G sits near 0.2 at the nominal rate.
WORKLOADS = {
    w.name: w
    for w in (
        WorkloadDescriptor("memory", 5, 1, 5, 0, 4, "Clifford"),
        WorkloadDescriptor("bell_chain", 6, 7, 24, 0, 5, "Clifford"),
        WorkloadDescriptor("ghz", 5, 6, 25, 0, 4, "Clifford"),
        WorkloadDescriptor("template", 4, 8, 26, 0, 6, "Clifford"),
        WorkloadDescriptor("ccx_heavy", 3, 12, 27, 14, 12, "NonClifford"),
        WorkloadDescriptor("t_sweep", 4, 10, 25, 16, 3, "NonClifford"),
        WorkloadDescriptor("bv", 5, 5, 24, 0, 4, "Structured"),
        WorkloadDescriptor("grover", 3, 14, 27, 7, 8, "Structured"),
        WorkloadDescriptor("qft", 4, 12, 26, 0, 12, "Structured"),
    )
}


@dataclass(frozen=True)
class CycleCounts:
    shots: int
    decode_errors: int
    detection_events: int
    histogram: dict[str, int]


@dataclass
class PlantState:
    cycle: int
    code_distance: int
    rng_seed: int
    last_p_base: float = float("nan")
    last_p_eff: float = float("nan")
    last_eps_logical: float = float("nan")
    last_fidelity: float = float("nan")


def _clip(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def drift_multiplier(t: int, params: DriftParams) -> float:
    """Deterministic part of the bracket in the drift law (without noise)."""
    frac = (t % params.T_run) / params.T_run
    m = 1.0 + params.alpha * math.sin(2.0 * math.pi * frac)
    if params.schedule == "peak":
        if params.peak_start <= frac <= params.peak_center:
            m += params.peak_height * (frac - params.peak_start) / (params.peak_center - params.peak_start)
        elif frac > params.peak_center:
            m += params.peak_height * math.exp(-(frac - params.peak_center) / params.peak_decay)
    return m


def drift_base_rate(t: int, params: DriftParams, rng: np.random.Generator | None = None) -> float:
    """Base bit-flip rate at cycle ``t``; stochastic mode adds one N(0, sigma^2) draw."""
    if not 0 <= t < params.T_run:
        raise ValueError(f"cycle {t} outside [0, {params.T_run})")
    bracket = drift_multiplier(t, params)
    if params.mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic drift needs an rng")
        bracket += rng.normal(0.0, params.noise_sigma)
    return _clip(params.p_phys0 * bracket, params.clip_lo, params.clip_hi)


def effective_rate(p_base: float, action: ActionLevel | float) -> float:
    scale = action.scale if isinstance(action, ActionLevel) else float(action)
    return _clip(scale * p_base, *P_EFF_CLIP)


def majority_decode(bits: str | Sequence[int]) -> tuple[int, int]:
    """Majority bit and non-unanimity flag of an odd-length bitstring."""
    vals = [int(b) for b in bits]
    d = len(vals)
    if d == 0 or d % 2 == 0:
        raise ValueError("majority decoding needs an odd number of bits")
    if any(v not in (0, 1) for v in vals):
        raise ValueError("bits must be 0 or 1")
    ones = sum(vals)
    return int(2 * ones > d), int(0 < ones < d)


def sample_memory_cycle(
    d: int, p_eff: float, shots: int, true_bit: int, rng: np.random.Generator
) -> CycleCounts:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if d not in VALID_DISTANCES:
        raise ValueError(f"code distance must be one of {VALID_DISTANCES}")
    uniforms = rng.random((shots, d))
    errors, detections, hist = kernels.tally_shots(uniforms, float(p_eff), int(true_bit))
    histogram = {format(k, f"0{d}b"): int(c) for k, c in enumerate(hist) if c}
    return CycleCounts(shots, errors, detections, histogram)


def analytic_logical_error(d: int, p: float) -> float:
    """Probability that more than half of ``d`` independent flips occur."""
    if d < 1 or d % 2 == 0:
        raise ValueError("d must be odd and positive")
    return float(sum(comb(d, k, exact=True) * p**k * (1 - p) ** (d - k) for k in range((d + 1) // 2, d + 1)))


def analytic_detection_rate(d: int, p: float) -> float:
    if d < 1:
        raise ValueError("d must be positive")
    if d == 1:
        return 0.0
    return float(1.0 - (1.0 - p) ** d - p**d)


def lambda_factor(eps_d1: float, eps_d2: float) -> float:
    """Error-suppression ratio eps_d1 / eps_d2 between two code distances."""
    if eps_d2 == 0:
        raise ZeroDivisionError("larger code saw no logical errors; suppression factor undefined")
    return eps_d1 / eps_d2


def surrogate_workload_error(workload: WorkloadDescriptor, p_eff: float) -> float:
    """Error accumulated over ``gate_count`` gates failing independently at ``p_eff``.

    A stand-in for distance-to-ideal on a benchmark circuit; not a physical model.
    """
    if not 0.0 <= p_eff <= 0.5:
        raise ValueError("p_eff must lie in [0, 0.5]")
    return _clip(1.0 - (1.0 - p_eff) ** workload.gate_count, 0.0, 1.0)


@dataclass
class PlantConfig:
    drift: DriftParams = field(default_factory=DriftParams)
    code_distance: int = 5
    shots: int = 1000
    kind: str = "workload"
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.code_distance not in VALID_DISTANCES:
            raise ValueError(f"code distance must be one of {VALID_DISTANCES}")
        if self.kind not in ("memory", "workload"):
            raise ValueError(f"unknown plant kind {self.kind!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


class RepetitionPlant:
    """reset/step interface over one run of ``drift.T_run`` cycles.

    ``kind="memory"`` reports the repetition-memory logical error from shot
    sampling. ``kind="workload"`` reports the surrogate workload error while
    the memory instrument still supplies detection rate and outcome entropy.
    """

    def __init__(
        self,
        config: PlantConfig | None = None,
        workload: WorkloadDescriptor | None = None,
        actions: Sequence[ActionLevel] = ACTIONS,
    ):
        self.config = config or PlantConfig()
        self.workload = workload or WORKLOADS["memory"]
        self.actions = tuple(actions)
        self.state: PlantState | None = None
        self._history: deque[float] = deque(maxlen=self.config.window)

    @property
    def T_run(self) -> int:
        return self.config.drift.T_run

    def reset(self, seed: int, params: DriftParams | None = None, d: int | None = None) -> PlantState:
        if params is not None or d is not None:
            self.config = replace(
                self.config,
                drift=params if params is not None else self.config.drift,
                code_distance=d if d is not None else self.config.code_distance,
            )
        self.state = PlantState(cycle=0, code_distance=self.config.code_distance, rng_seed=int(seed))
        self._history.clear()
        return replace(self.state)

    def base_rate(self, t: int) -> float:
        """Drift realisation at cycle ``t``; a pure function of (seed, t)."""
        if self.state is None:
            raise RuntimeError("reset() the plant first")
        return drift_base_rate(t, self.config.drift, stream_rng(self.state.rng_seed, DRIFT_STREAM, t))

    def step(self, action: ActionLevel | str) -> tuple[PlantState, TelemetryRecord]:
        if self.state is None:
            raise RuntimeError("reset() the plant first")
        if not isinstance(action, ActionLevel):
            action = action_by_label(self.actions, action)
        st = self.state
        t = st.cycle
        if t >= self.T_run:
            raise EndOfRun(f"run horizon of {self.T_run} cycles exhausted")
        seed, d = st.rng_seed, st.code_distance
        p_base = self.base_rate(t)
        p_eff = effective_rate(p_base, action)
        true_bit = int(stream_rng(seed, BIT_STREAM, t).integers(0, 2))
        counts = sample_memory_cycle(d, p_eff, self.config.shots, true_bit, stream_rng(seed, SHOT_STREAM, t))
        if self.config.kind == "memory":
            eps = counts.decode_errors / counts.shots
        else:
            eps = surrogate_workload_error(self.workload, p_eff)
        detection = counts.detection_events / counts.shots
        entropy = histogram_entropy(list(counts.histogram.values()))
        features = build_features(
            t, self.T_run, self.workload, p_eff, eps, entropy, list(self._history), self.config.window
        )
        record = TelemetryRecord(
            cycle=t,
            code_dist=d,
            p_phys=p_base,
            p_eff=p_eff,
            eps_logical=eps,
            fidelity=1.0 - eps,
            detection_rate=detection,
            features=features,
            action_level=action.label.value,
            workload_name=self.workload.name,
            run=seed,
        )
        self._history.append(eps)
        st.cycle = t + 1
        st.last_p_base, st.last_p_eff = p_base, p_eff
        st.last_eps_logical, st.last_fidelity = eps, 1.0 - eps
        return replace(st), record


def workloads_from_names(names: Iterable[str]) -> list[WorkloadDescriptor]:
    out = []
    for name in names:
        if name not in WORKLOADS:
            raise KeyError(f"unknown workload {name!r}; known: {', '.join(sorted(WORKLOADS))}")
        out.append(WORKLOADS[name])
    return out
