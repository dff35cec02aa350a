"""Per-cycle telemetry: the 13-D feature vector, normalisation and JSONL logs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_FEATURES = 13
DEFAULT_WINDOW = 10
STD_FLOOR = 1e-8
LOG_FLOOR = 1e-9

FEATURE_NAMES = (
    "time_frac",
    "n_qubits",
    "depth",
    "p_eff",
    "eps_logical",
    "fidelity",
    "entropy",
    "t_count",
    "two_qubit_count",
    "log_eps",
    "log_p_eff",
    "window_mean_eps",
    "window_var_eps",
)

_REQUIRED_KEYS = (
    "cycle",
    "code_dist",
    "p_phys",
    "p_eff",
    "eps_logical",
    "fidelity_logical",
    "detection_rate",
    "features",
    "action_level",
)


class TelemetryFormatError(ValueError):
    """A telemetry line could not be parsed into a record."""


@dataclass
class TelemetryRecord:
    """One control cycle's observation.

    ``reward``, ``context`` and the forecast moments are filled in by the
    controller when available; ``run`` tags the seed of the run the record
    came from so trace files can be split back into runs.
    """

    cycle: int
    code_dist: int
    p_phys: float
    p_eff: float
    eps_logical: float
    fidelity: float
    detection_rate: float
    features: list[float]
    action_level: str
    reward: float | None = None
    workload_name: str = ""
    run: int | None = None
    context: int | None = None
    forecast_mu: float | None = None
    forecast_sigma: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "cycle": self.cycle,
            "code_dist": self.code_dist,
            "p_phys": self.p_phys,
            "p_eff": self.p_eff,
            "eps_logical": self.eps_logical,
            "fidelity_logical": self.fidelity,
            "detection_rate": self.detection_rate,
            "features": [float(v) for v in self.features],
            "action_level": self.action_level,
            "reward": self.reward,
            "workload_name": self.workload_name,
        }
        for key in ("run", "context", "forecast_mu", "forecast_sigma"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "TelemetryRecord":
        for key in _REQUIRED_KEYS:
            if key not in obj:
                raise KeyError(key)
        features = [float(v) for v in obj["features"]]
        if len(features) != N_FEATURES:
            raise ValueError(f"features must have {N_FEATURES} entries, got {len(features)}")
        return cls(
            cycle=int(obj["cycle"]),
            code_dist=int(obj["code_dist"]),
            p_phys=float(obj["p_phys"]),
            p_eff=float(obj["p_eff"]),
            eps_logical=float(obj["eps_logical"]),
            fidelity=float(obj["fidelity_logical"]),
            detection_rate=float(obj["detection_rate"]),
            features=features,
            action_level=str(obj["action_level"]),
            reward=None if obj.get("reward") is None else float(obj["reward"]),
            workload_name=str(obj.get("workload_name", "")),
            run=obj.get("run"),
            context=obj.get("context"),
            forecast_mu=obj.get("forecast_mu"),
            forecast_sigma=obj.get("forecast_sigma"),
        )


def shannon_entropy(dist) -> float:
    """Entropy in bits of a probability vector or ``{outcome: prob}`` mapping."""
    if isinstance(dist, Mapping):
        probs = np.fromiter((float(v) for v in dist.values()), dtype=np.float64)
    else:
        probs = np.asarray(dist, dtype=np.float64).ravel()
    if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("distribution must be non-negative and sum to 1")
    nz = probs[probs > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def histogram_entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    return shannon_entropy(counts / total)


def window_stats(history: Sequence[float], window: int = DEFAULT_WINDOW) -> tuple[float, float]:
    """Mean and population variance of the last ``window`` values ((0, 0) if empty)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(history) == 0:
        return 0.0, 0.0
    tail = np.asarray(list(history)[-window:], dtype=np.float64)
    return float(tail.mean()), float(tail.var())


def build_features(
    cycle: int,
    T_run: int,
    workload,
    p_eff: float,
    eps_logical: float,
    entropy_bits: float,
    history: Sequence[float] = (),
    window: int = DEFAULT_WINDOW,
) -> list[float]:
    """Assemble the 13-D telemetry vector.

    ``history`` holds the logical errors of previous cycles (not including
    this one) and feeds the window statistics.
    """
    if T_run < 2:
        raise ValueError("T_run must be >= 2")
    fidelity = 1.0 - eps_logical
    w_mean, w_var = window_stats(history, window)
    return [
        cycle / (T_run - 1),
        workload.n_qubits / 10.0,
        workload.depth / 100.0,
        float(p_eff),
        float(eps_logical),
        fidelity,
        entropy_bits / 10.0,
        workload.t_count / 50.0,
        workload.two_qubit_count / 100.0,
        math.log10(max(eps_logical, LOG_FLOOR)),
        math.log10(max(p_eff, LOG_FLOOR)),
        w_mean,
        w_var,
    ]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floor: float = STD_FLOOR

    def normalize(self, f) -> np.ndarray:
        return (np.asarray(f, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "floor": self.floor}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "NormStats":
        return cls(
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
            floor=float(obj.get("floor", STD_FLOOR)),
        )


def fit_normalizer(dataset, floor: float = STD_FLOOR) -> NormStats:
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("cannot fit normalizer on an empty dataset")
    return NormStats(mean=data.mean(axis=0), std=np.maximum(data.std(axis=0), floor), floor=floor)


def append_record(record: TelemetryRecord, sink: IO[str]) -> None:
    # json floats use repr(), which round-trips exactly
    sink.write(json.dumps(record.to_json_dict(), allow_nan=False) + "\n")


def write_records(records: Iterable[TelemetryRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            append_record(rec, fh)


def read_records(source) -> Iterator[TelemetryRecord]:
    """Yield records from a path or text stream.

    A malformed line raises :class:`TelemetryFormatError` with its line
    number, except an unterminated final line (a partial write), which is
    skipped with a warning.
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines(keepends=True)
    else:
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        is_partial = lineno == len(lines) and not line.endswith("\n")
        try:
            obj = json.loads(line)
            yield TelemetryRecord.from_json_dict(obj)
        except KeyError as exc:
            if is_partial:
                logger.warning("skipping partial trailing line %d", lineno)
                return
            raise TelemetryFormatError(f"line {lineno}: missing required key {exc.args[0]!r}") from None
        except (ValueError, TypeError) as exc:
            if is_partial:
                logger.warning("skipping partial trailing line %d", lineno)
                return
            raise TelemetryFormatError(f"line {lineno}: {exc}") from None


def feature_matrix(records: Sequence[TelemetryRecord]) -> np.ndarray:
    return np.asarray([r.features for r in records], dtype=np.float64).reshape(-1, N_FEATURES)
