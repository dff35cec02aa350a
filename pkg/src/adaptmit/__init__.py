"""Adaptive noise-mitigation controller for repetition-code workloads under drift.

Pipeline: telemetry -> context map (growing hierarchical SOM) -> fidelity
forecast (sparse variational GP) -> cost-aware Thompson-sampling bandit.
"""
from __future__ import annotations

from .kernels import BACKEND
from .plant import ACTIONS, WORKLOADS, DriftParams, Level, PlantConfig, RepetitionPlant

__version__ = "0.1.0"

__all__ = ["ACTIONS", "BACKEND", "WORKLOADS", "DriftParams", "Level", "PlantConfig", "RepetitionPlant", "__version__"]
