"""Growing hierarchical self-organising map used as a context mapper.

Each grid grows in breadth (row/column insertion) until its mean unit
quantisation error falls below ``tau1`` times the error of the unit it refines;
units still coarser than ``tau2`` times the root-level error spawn child grids.
Leaves of the resulting tree are the discrete context labels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import kernels
from .telemetry import NormStats

logger = logging.getLogger(__name__)


class SomUnit(NamedTuple):
    weight: np.ndarray
    hit_count: int
    mqe: float


@dataclass
class SomParams:
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

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("tau1 and tau2 must be positive")
        if self.max_depth < 1 or self.max_rows < 2 or self.max_cols < 2:
            raise ValueError("max_depth >= 1 and max grid >= 2x2 required")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class SomGrid:
    rows: int
    cols: int
    weights: np.ndarray
    hits: np.ndarray = None  # type: ignore[assignment]
    mqe: np.ndarray = None  # type: ignore[assignment]
    parent_unit: int | None = None
    depth: int = 1
    saturated: bool = False
    children: dict[int, "SomGrid"] = field(default_factory=dict)
    labels: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        n = self.rows * self.cols
        if self.weights.shape[0] != n:
            raise ValueError("rows * cols must equal the number of units")
        if self.hits is None:
            self.hits = np.zeros(n, dtype=np.int64)
        if self.mqe is None:
            self.mqe = np.zeros(n, dtype=np.float64)

    @property
    def n_units(self) -> int:
        return self.rows * self.cols

    def unit(self, i: int) -> SomUnit:
        return SomUnit(self.weights[i], int(self.hits[i]), float(self.mqe[i]))

    def coords(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.n_units), self.cols)
        return np.column_stack([r, c]).astype(np.float64)

    def mean_mqe(self) -> float:
        occupied = self.hits > 0
        return float(self.mqe[occupied].mean()) if occupied.any() else 0.0

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "weights": self.weights.tolist(),
            "hits": self.hits.tolist(),
            "mqe": self.mqe.tolist(),
            "parent_unit": self.parent_unit,
            "depth": self.depth,
            "saturated": self.saturated,
            "children": {str(k): v.to_dict() for k, v in sorted(self.children.items())},
            "labels": {str(k): v for k, v in sorted(self.labels.items())},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SomGrid":
        return cls(
            rows=int(obj["rows"]),
            cols=int(obj["cols"]),
            weights=np.asarray(obj["weights"], dtype=np.float64),
            hits=np.asarray(obj["hits"], dtype=np.int64),
            mqe=np.asarray(obj["mqe"], dtype=np.float64),
            parent_unit=obj.get("parent_unit"),
            depth=int(obj.get("depth", 1)),
            saturated=bool(obj.get("saturated", False)),
            children={int(k): cls.from_dict(v) for k, v in obj.get("children", {}).items()},
            labels={int(k): int(v) for k, v in obj.get("labels", {}).items()},
        )


def _lattice_d2(rows: int, cols: int) -> np.ndarray:
    r, c = np.divmod(np.arange(rows * cols), cols)
    return ((r[:, None] - r[None, :]) ** 2 + (c[:, None] - c[None, :]) ** 2).astype(np.float64)


def unit_mqe(weight, mapped) -> float:
    """Mean Euclidean distance of ``mapped`` samples to ``weight`` (0 if none)."""
    mapped = np.asarray(mapped, dtype=np.float64)
    if mapped.size == 0:
        return 0.0
    return float(np.linalg.norm(mapped.reshape(-1, np.size(weight)) - weight, axis=1).mean())


def assign(grid: SomGrid, data: np.ndarray) -> np.ndarray:
    """Map ``data`` onto ``grid``; refresh hit counts and unit MQE. Returns BMU indices."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    idx, dist = kernels.bmu_batch(grid.weights, data)
    grid.hits = np.bincount(idx, minlength=grid.n_units).astype(np.int64)
    sums = np.bincount(idx, weights=dist, minlength=grid.n_units)
    grid.mqe = np.divide(sums, grid.hits, out=np.zeros(grid.n_units), where=grid.hits > 0)
    return idx


def train_som(
    data,
    rows: int,
    cols: int,
    epochs: int = 10,
    lr: tuple[float, float] = (0.5, 0.01),
    radius: tuple[float, float] | None = None,
    rng: np.random.Generator | None = None,
    init: np.ndarray | None = None,
) -> SomGrid:
    """Classic online SOM with linear learning-rate and radius decay.

    Samples are presented in a fresh seeded permutation each epoch. Initial
    weights default to distinct training samples drawn with ``rng``.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("cannot train a SOM on empty data")
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, units = data.shape[0], rows * cols
    if init is None:
        pick = rng.choice(n, size=units, replace=n < units)
        weights = data[pick].copy()
    else:
        weights = np.array(init, dtype=np.float64, order="C", copy=True)
        if weights.shape != (units, data.shape[1]):
            raise ValueError("init weights have the wrong shape")
    if radius is None:
        radius = (max(rows, cols) / 2.0, 0.5)
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    steps = order.size
    lr_sched = np.linspace(lr[0], lr[1], steps)
    radius_sched = np.linspace(radius[0], radius[1], steps)
    kernels.som_train_steps(weights, _lattice_d2(rows, cols), data, order, lr_sched, radius_sched)
    grid = SomGrid(rows, cols, weights)
    assign(grid, data)
    return grid


def _insert(grid: SomGrid, axis: int, after: int) -> np.ndarray:
    """Weights with a new row (axis 0) or column (axis 1) after index ``after``,
    initialised as the mean of its two neighbours."""
    w = grid.weights.reshape(grid.rows, grid.cols, -1)
    new = 0.5 * (np.take(w, after, axis=axis) + np.take(w, after + 1, axis=axis))
    return np.insert(w, after + 1, new, axis=axis)


def grow_horizontal(
    grid: SomGrid,
    data,
    mqe_parent: float,
    params: SomParams,
    rng: np.random.Generator,
) -> SomGrid:
    """Insert rows/columns until mean MQE <= tau1 * mqe_parent or the size cap hits.

    Reaching the cap sets ``grid.saturated`` rather than raising.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    assign(grid, data)
    while grid.mean_mqe() > params.tau1 * mqe_parent:
        e = int(np.argmax(grid.mqe))
        er, ec = divmod(e, grid.cols)
        best, best_dist = None, -1.0
        for nr, nc in ((er - 1, ec), (er + 1, ec), (er, ec - 1), (er, ec + 1)):
            if 0 <= nr < grid.rows and 0 <= nc < grid.cols:
                dist = float(np.linalg.norm(grid.weights[e] - grid.weights[nr * grid.cols + nc]))
                if dist > best_dist:
                    best, best_dist = (nr, nc), dist
        if best is None:
            break
        nr, nc = best
        if nr == er:
            if grid.cols >= params.max_cols:
                grid.saturated = True
                break
            w = _insert(grid, axis=1, after=min(ec, nc))
        else:
            if grid.rows >= params.max_rows:
                grid.saturated = True
                break
            w = _insert(grid, axis=0, after=min(er, nr))
        rows, cols = w.shape[0], w.shape[1]
        new = train_som(
            data,
            rows,
            cols,
            epochs=params.epochs,
            lr=(params.retrain_lr_start, params.lr_end),
            radius=(max(params.retrain_radius_start, params.radius_end), params.radius_end),
            rng=rng,
            init=w.reshape(rows * cols, -1),
        )
        new.parent_unit, new.depth = grid.parent_unit, grid.depth
        grid = new
    if grid.saturated:
        logger.info("grid growth saturated at %dx%d", grid.rows, grid.cols)
    return grid


@dataclass
class GhsomTree:
    root: SomGrid
    n_contexts: int
    mqe0: float
    params: SomParams
    norm_stats: NormStats | None = None

    def leaves(self) -> list[tuple[SomGrid, int]]:
        out: list[tuple[SomGrid, int]] = []

        def walk(g: SomGrid):
            for u in range(g.n_units):
                if u in g.children:
                    walk(g.children[u])
                else:
                    out.append((g, u))

        walk(self.root)
        return out

    def to_dict(self) -> dict:
        return {
            "root": self.root.to_dict(),
            "n_contexts": self.n_contexts,
            "mqe0": self.mqe0,
            "params": vars(self.params).copy(),
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "GhsomTree":
        ns = obj.get("norm_stats")
        return cls(
            root=SomGrid.from_dict(obj["root"]),
            n_contexts=int(obj["n_contexts"]),
            mqe0=float(obj["mqe0"]),
            params=SomParams(**obj["params"]),
            norm_stats=None if ns is None else NormStats.from_dict(ns),
        )


def _grow_grid(data, mqe_parent, params, rng, depth, parent_unit=None) -> SomGrid:
    grid = train_som(
        data,
        2,
        2,
        epochs=params.epochs,
        lr=(params.lr_start, params.lr_end),
        radius=(1.0, params.radius_end),
        rng=rng,
    )
    grid.depth, grid.parent_unit = depth, parent_unit
    return grow_horizontal(grid, data, mqe_parent, params, rng)


def train_ghsom(
    data,
    params: SomParams | None = None,
    rng: np.random.Generator | None = None,
    norm_stats: NormStats | None = None,
) -> GhsomTree:
    params = params or SomParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("cannot train a GHSOM on empty data")
    mqe0 = float(np.linalg.norm(data - data.mean(axis=0), axis=1).mean())

    def expand(grid: SomGrid, subset: np.ndarray):
        idx = assign(grid, subset)
        if grid.depth >= params.max_depth:
            return
        for u in range(grid.n_units):
            if grid.mqe[u] > params.tau2 * mqe0:
                mapped = subset[idx == u]
                child = _grow_grid(mapped, grid.mqe[u], params, rng, grid.depth + 1, parent_unit=u)
                grid.children[u] = child
                expand(child, mapped)

    root = _grow_grid(data, mqe0, params, rng, depth=1)
    expand(root, data)
    tree = GhsomTree(root=root, n_contexts=0, mqe0=mqe0, params=params, norm_stats=norm_stats)
    for label, (g, u) in enumerate(tree.leaves()):
        g.labels[u] = label
    tree.n_contexts = len(tree.leaves())
    return tree


def map_context(tree: GhsomTree, f_norm) -> int:
    """Descend by best-matching unit to a leaf; ties go to the lowest unit index."""
    x = np.ascontiguousarray(np.asarray(f_norm, dtype=np.float64).reshape(1, -1))
    g = tree.root
    while True:
        u = int(kernels.bmu_batch(g.weights, x)[0][0])
        if u in g.children:
            g = g.children[u]
        else:
            return g.labels[u]


def map_contexts(tree: GhsomTree, data) -> np.ndarray:
    data = np.ascontiguousarray(data, dtype=np.float64)
    return np.array([map_context(tree, row) for row in data], dtype=np.int64)


def effective_contexts(tree: GhsomTree, data) -> int:
    """Number of distinct leaves that receive at least one sample of ``data``."""
    return int(np.unique(map_contexts(tree, data)).size)
