from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptmit.ghsom import (
    GhsomTree,
    SomGrid,
    SomParams,
    assign,
    effective_contexts,
    grow_horizontal,
    map_context,
    map_contexts,
    train_ghsom,
    train_som,
    unit_mqe,
)
from adaptmit.kernels import bmu_batch


def clusters(k: int, n_per: int, sep: float, seed: int, dim: int = 13):
    rng = np.random.default_rng(seed)
    centers = np.zeros((k, dim))
    for i in range(k):
        centers[i, i % dim] = sep * (1 + i // dim)
    data = np.concatenate([centers[i] + rng.normal(size=(n_per, dim)) for i in range(k)])
    labels = np.repeat(np.arange(k), n_per)
    return data, labels, centers


def purity(pred, labels) -> float:
    total = 0
    for c in np.unique(pred):
        total += np.bincount(labels[pred == c]).max()
    return total / len(labels)


def test_unit_mqe_examples():
    w = np.zeros(2)
    assert unit_mqe(w, np.empty((0, 2))) == 0.0
    assert unit_mqe(w, [[2.0, 0.0]]) == 2.0
    assert unit_mqe(w, [[1.0, 0.0], [0.0, 3.0]]) == 2.0


def test_train_som_fixed_point():
    v = np.linspace(-1, 1, 13)
    grid = train_som(np.tile(v, (50, 1)), 2, 3, rng=np.random.default_rng(0))
    np.testing.assert_allclose(grid.weights, np.tile(v, (6, 1)), atol=1e-6)


def test_train_som_single_unit_tracks_centroid():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(400, 13)) + 3.0
    grid = train_som(data, 1, 1, epochs=20, rng=np.random.default_rng(2))
    centroid_mqe = unit_mqe(data.mean(axis=0), data)
    assert grid.mqe[0] == pytest.approx(centroid_mqe, rel=0.02)


def test_train_som_two_clusters_one_unit_each():
    data, _, centers = clusters(2, 100, 10.0, seed=3)
    grid = train_som(data, 1, 2, rng=np.random.default_rng(4))
    means = np.array([data[:100].mean(0), data[100:].mean(0)])
    d = np.linalg.norm(grid.weights[:, None, :] - means[None, :, :], axis=2)
    assert sorted(d.argmin(axis=1).tolist()) == [0, 1]
    # the neighbourhood kernel keeps adjacent units slightly pulled together
    assert d.min(axis=1).max() < 0.25 * np.linalg.norm(means[0] - means[1])


def test_train_som_rejects_empty():
    with pytest.raises(ValueError):
        train_som(np.empty((0, 13)), 2, 2)


def test_train_som_deterministic():
    data, _, _ = clusters(3, 30, 5.0, seed=5)
    a = train_som(data, 2, 2, rng=np.random.default_rng(9))
    b = train_som(data, 2, 2, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_grow_no_growth_when_tau1_is_one():
    data, _, _ = clusters(4, 50, 8.0, seed=6)
    mqe0 = unit_mqe(data.mean(0), data)
    grid = train_som(data, 2, 2, rng=np.random.default_rng(0))
    out = grow_horizontal(grid, data, mqe0, SomParams(tau1=1.0), np.random.default_rng(0))
    assert (out.rows, out.cols) == (2, 2)


def test_grow_single_point():
    data = np.ones((1, 13))
    grid = train_som(data, 2, 2, rng=np.random.default_rng(0))
    out = grow_horizontal(grid, data, 0.0, SomParams(tau1=0.1), np.random.default_rng(0))
    assert (out.rows, out.cols) == (2, 2)


def test_grow_separates_four_clusters():
    data, labels, _ = clusters(4, 60, 10.0, seed=7)
    mqe0 = unit_mqe(data.mean(0), data)
    grid = train_som(data, 1, 2, rng=np.random.default_rng(1))
    out = grow_horizontal(grid, data, mqe0, SomParams(tau1=0.2), np.random.default_rng(1))
    assert out.n_units >= 4
    idx = assign(out, data)
    bmus = [np.bincount(idx[labels == k]).argmax() for k in range(4)]
    assert len(set(bmus)) == 4


def test_grow_saturates_at_cap():
    data = np.random.default_rng(8).normal(size=(300, 13))
    grid = train_som(data, 2, 2, rng=np.random.default_rng(0))
    params = SomParams(tau1=1e-6, max_rows=3, max_cols=3)
    out = grow_horizontal(grid, data, unit_mqe(data.mean(0), data), params, np.random.default_rng(0))
    assert out.saturated and out.rows <= 3 and out.cols <= 3


def test_growth_rarely_increases_mqe():
    ok = 0
    trials = 20
    for seed in range(trials):
        data, _, _ = clusters(5, 40, 6.0, seed=100 + seed)
        mqe0 = unit_mqe(data.mean(0), data)
        params = SomParams(tau1=1e-6, max_rows=3, max_cols=2)
        grid = train_som(data, 2, 2, rng=np.random.default_rng(seed))
        before = grid.mean_mqe()
        grown = grow_horizontal(grid, data, mqe0, params, np.random.default_rng(seed))
        ok += grown.mean_mqe() <= before + 1e-9
    assert ok / trials >= 0.95


def test_tau2_infinite_gives_flat_tree():
    data, _, _ = clusters(3, 40, 6.0, seed=9)
    tree = train_ghsom(data, SomParams(tau2=float("inf")), rng=np.random.default_rng(0))
    assert tree.root.children == {}
    assert tree.n_contexts == tree.root.n_units


def test_homogeneous_data_single_context():
    data = np.tile(np.arange(13.0), (80, 1))
    tree = train_ghsom(data, rng=np.random.default_rng(0))
    assert effective_contexts(tree, data) == 1


def test_two_clusters_pure():
    data, labels, _ = clusters(2, 150, 10.0, seed=10)
    tree = train_ghsom(data, rng=np.random.default_rng(0))
    assert purity(map_contexts(tree, data), labels) == 1.0


def test_labels_contiguous_and_round_trip():
    data, _, _ = clusters(4, 40, 5.0, seed=11)
    tree = train_ghsom(data, SomParams(tau2=0.3), rng=np.random.default_rng(0))
    labels = sorted(g.labels[u] for g, u in tree.leaves())
    assert labels == list(range(tree.n_contexts))
    back = GhsomTree.from_dict(json.loads(json.dumps(tree.to_dict())))
    assert back.n_contexts == tree.n_contexts
    np.testing.assert_array_equal(map_contexts(back, data), map_contexts(tree, data))


def test_every_unit_leaf_or_one_child():
    data, _, _ = clusters(4, 40, 5.0, seed=12)
    tree = train_ghsom(data, SomParams(tau2=0.3), rng=np.random.default_rng(0))

    def walk(g: SomGrid):
        for u in range(g.n_units):
            assert (u in g.children) != (u in g.labels)
            if u in g.children:
                walk(g.children[u])

    walk(tree.root)


def test_map_context_follows_training_chain_and_leaf_weights():
    data, _, _ = clusters(3, 40, 6.0, seed=13)
    tree = train_ghsom(data, SomParams(tau2=0.3), rng=np.random.default_rng(0))
    for g, u in tree.leaves():
        assert map_context(tree, g.weights[u]) == g.labels[u] or g.parent_unit is not None
    # root-level leaves are hit exactly by their own weights
    for u, lab in tree.root.labels.items():
        assert map_context(tree, tree.root.weights[u]) == lab
    idx = assign(tree.root, data)
    for row, u in zip(data[:20], idx[:20]):
        c = map_context(tree, row)
        if u in tree.root.labels:
            assert c == tree.root.labels[u]


def test_map_context_tie_goes_to_lowest_index():
    w = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0], [0.0, -5.0]])
    root = SomGrid(2, 2, w, labels={0: 0, 1: 1, 2: 2, 3: 3})
    tree = GhsomTree(root, 4, 1.0, SomParams())
    assert map_context(tree, [0.0, 0.0]) == 0


@settings(max_examples=25)
@given(seed=st.integers(0, 2**31), x=st.lists(st.floats(-50, 50), min_size=13, max_size=13))
def test_map_context_total_and_deterministic(seed, x):
    data, _, _ = clusters(2, 20, 6.0, seed=seed % 1000)
    tree = train_ghsom(data, rng=np.random.default_rng(seed))
    c = map_context(tree, x)
    assert 0 <= c < tree.n_contexts
    assert c == map_context(tree, x)


@pytest.mark.parametrize("seed", range(4))
def test_growth_never_worse_than_single_centroid(seed):
    rng = np.random.default_rng(seed)
    data = np.concatenate([rng.normal(size=(150, 13)), 3 * rng.normal(size=(150, 13)) + 8])
    tree = train_ghsom(data, SomParams(tau1=1e-6, tau2=float("inf")), rng=np.random.default_rng(seed))
    _, dist = bmu_batch(tree.root.weights, data)
    assert dist.mean() <= tree.mqe0
