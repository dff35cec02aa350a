"""Experiment configuration: an INI file with one section per component.

Unknown sections or keys are rejected. Custom workloads can be declared in
``[workload.<name>]`` sections and referenced from ``plant.workloads``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .ghsom import SomParams
from .plant import (
    ACTIONS,
    WORKLOADS,
    DriftParams,
    Level,
    PlantConfig,
    WorkloadDescriptor,
    make_actions,
)
from .policy import PolicyParams


class ConfigError(ValueError):
    pass


@dataclass
class PlantSection:
    p_phys0: float = 0.01
    alpha: float = 0.5
    noise_sigma: float = 0.1
    mode: str = "stochastic"
    clip_lo: float = 1e-4
    clip_hi: float = 0.5
    schedule: str = "peak"
    peak_height: float = 2.0
    peak_start: float = 0.3
    peak_center: float = 0.5
    peak_decay: float = 0.15
    code_distance: int = 5
    shots: int = 1000
    kind: str = "workload"
    workloads: tuple[str, ...] = ("ghz", "ccx_heavy", "qft")


@dataclass
class TelemetrySection:
    window: int = 10
    std_floor: float = 1e-8


@dataclass
class GhsomSection:
    tau1: float = 0.6
    tau2: float = 0.2
    max_depth: int = 3
    max_rows: int = 8
    max_cols: int = 8
    epochs: int = 10
    lr_start: float = 0.5
    lr_end: float = 0.01
    radius_end: float = 0.5
    retrain_lr_start: float = 0.2
    retrain_radius_start: float = 1.0


@dataclass
class SvgpSection:
    M: int = 16
    iters: int = 2000
    step_size: float = 0.01
    delta: int = 1
    encoding: str = "onehot"
    include_distance: bool = True
    natgrad: float = 1.0


@dataclass
class PolicySection:
    lam: float = 0.05
    v: float = 0.25
    reward_mode: str = "error_delta"
    sampling: str = "weights"
    deterministic: bool = False
    prior_scale: float = 1.0
    expert_lo: float = 0.005
    expert_hi: float = 0.02
    scale_moderate: float = 0.7
    scale_severe: float = 0.3
    cost_moderate: float = 0.3
    cost_severe: float = 1.0


@dataclass
class RunSection:
    T_run: int = 200
    train_seeds: int = 5
    train_base_seed: int = 0
    eval_seeds: int = 10
    eval_base_seed: int = 1000
    explore: float = 0.1
    behavior: str = "expert"
    strategies: tuple[str, ...] = ("unmitigated", "static_severe", "adaptive")


@dataclass
class OutputSection:
    out_dir: str = "runs"


_SECTIONS = {
    "plant": PlantSection,
    "telemetry": TelemetrySection,
    "ghsom": GhsomSection,
    "svgp": SvgpSection,
    "policy": PolicySection,
    "run": RunSection,
    "output": OutputSection,
}

_WORKLOAD_FIELDS = {f.name for f in dataclasses.fields(WorkloadDescriptor)} - {"name"}


@dataclass
class ExperimentConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    telemetry: TelemetrySection = field(default_factory=TelemetrySection)
    ghsom: GhsomSection = field(default_factory=GhsomSection)
    svgp: SvgpSection = field(default_factory=SvgpSection)
    policy: PolicySection = field(default_factory=PolicySection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)
    custom_workloads: dict[str, WorkloadDescriptor] = field(default_factory=dict)

    def __post_init__(self):
        # build every component object once so invariant violations surface early
        try:
            self.drift_params()
            self.plant_config()
            self.actions()
            self.som_params()
            self.policy_params()
            self.workloads()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        if self.svgp.M < 1 or self.svgp.iters < 0 or self.svgp.delta < 1:
            raise ConfigError("svgp: need M >= 1, iters >= 0, delta >= 1")
        if self.svgp.encoding not in ("onehot", "raw"):
            raise ConfigError(f"svgp.encoding must be onehot or raw, got {self.svgp.encoding!r}")
        if not 0.0 <= self.run.explore <= 1.0:
            raise ConfigError("run.explore must lie in [0, 1]")
        if self.run.behavior not in ("expert", "random"):
            raise ConfigError("run.behavior must be expert or random")
        if self.telemetry.window < 1:
            raise ConfigError("telemetry.window must be >= 1")

    # -- component views ----------------------------------------------------
    def drift_params(self) -> DriftParams:
        p = self.plant
        return DriftParams(
            p_phys0=p.p_phys0,
            T_run=self.run.T_run,
            alpha=p.alpha,
            noise_sigma=p.noise_sigma,
            mode=p.mode,
            clip_lo=p.clip_lo,
            clip_hi=p.clip_hi,
            schedule=p.schedule,
            peak_height=p.peak_height,
            peak_start=p.peak_start,
            peak_center=p.peak_center,
            peak_decay=p.peak_decay,
        )

    def plant_config(self) -> PlantConfig:
        return PlantConfig(
            drift=self.drift_params(),
            code_distance=self.plant.code_distance,
            shots=self.plant.shots,
            kind=self.plant.kind,
            window=self.telemetry.window,
        )

    def actions(self):
        p = self.policy
        return make_actions(
            {Level.MODERATE: p.scale_moderate, Level.SEVERE: p.scale_severe},
            {Level.MODERATE: p.cost_moderate, Level.SEVERE: p.cost_severe},
        )

    def som_params(self) -> SomParams:
        return SomParams(**dataclasses.asdict(self.ghsom))

    def policy_params(self) -> PolicyParams:
        p = self.policy
        return PolicyParams(
            lam=p.lam,
            v=p.v,
            reward_mode=p.reward_mode,
            deterministic=p.deterministic,
            sampling=p.sampling,
            prior_scale=p.prior_scale,
            expert_lo=p.expert_lo,
            expert_hi=p.expert_hi,
        )

    def workloads(self) -> list[WorkloadDescriptor]:
        known = {**WORKLOADS, **self.custom_workloads}
        out = []
        for name in self.plant.workloads:
            if name not in known:
                raise KeyError(f"unknown workload {name!r}")
            out.append(known[name])
        return out

    def train_seeds(self) -> list[int]:
        return [self.run.train_base_seed + k for k in range(self.run.train_seeds)]

    def eval_seeds(self) -> list[int]:
        return [self.run.eval_base_seed + k for k in range(self.run.eval_seeds)]

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        for sec in out.values():
            for k, v in sec.items():
                if isinstance(v, tuple):
                    sec[k] = list(v)
        for name, w in sorted(self.custom_workloads.items()):
            out[f"workload.{name}"] = {k: getattr(w, k) for k in sorted(_WORKLOAD_FIELDS)}
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Mapping[str, Any]]) -> "ExperimentConfig":
        sections: dict[str, Any] = {}
        custom: dict[str, WorkloadDescriptor] = {}
        for sec_name, values in obj.items():
            if sec_name.startswith("workload."):
                name = sec_name.split(".", 1)[1]
                unknown = set(values) - _WORKLOAD_FIELDS
                if unknown:
                    raise ConfigError(f"[{sec_name}]: unknown keys {sorted(unknown)}")
                try:
                    custom[name] = WorkloadDescriptor(
                        name=name, **{k: _coerce(v, _workload_default(k)) for k, v in values.items()}
                    )
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"[{sec_name}]: {exc}") from None
                continue
            if sec_name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{sec_name}]")
            sec_cls = _SECTIONS[sec_name]
            defaults = sec_cls()
            names = {f.name for f in dataclasses.fields(sec_cls)}
            kwargs = {}
            for key, raw in values.items():
                if key not in names:
                    raise ConfigError(f"[{sec_name}]: unknown key {key!r}")
                try:
                    kwargs[key] = _coerce(raw, getattr(defaults, key))
                except ValueError as exc:
                    raise ConfigError(f"[{sec_name}] {key}: {exc}") from None
            sections[sec_name] = sec_cls(**kwargs)
        return cls(**sections, custom_workloads=custom)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # type: ignore[assignment]
        for sec, values in self.to_dict().items():
            cp[sec] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        obj = self.to_dict()
        obj[section].update(values)
        return ExperimentConfig.from_dict(obj)


def _workload_default(key: str):
    return "Clifford" if key == "family" else 0


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw, default):
    if not isinstance(raw, str):
        if isinstance(default, tuple):
            return tuple(str(x) for x in raw)
        if isinstance(default, bool):
            return bool(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, int):
            return int(raw)
        return raw
    text = raw.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        value = float(text)
        if math.isnan(value):
            raise ValueError("NaN is not allowed")
        return value
    if isinstance(default, tuple):
        return tuple(s.strip() for s in text.split(",") if s.strip())
    return text


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # type: ignore[assignment]
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict({s: dict(cp[s]) for s in cp.sections()})


__all__ = ["ACTIONS", "ConfigError", "ExperimentConfig", "load_config"]
