"""Prototype inference, label propagation, and the semantic loss vs oracles."""

import numpy as np
import pytest

from s3cl import (
    AttributedGraph,
    LabelPropagationConfig,
    PrototypeInferenceConfig,
    PrototypeState,
    infer_prototypes,
    normalized_adjacency,
    recompute_prototypes,
    refine_labels,
    semantic_loss,
)
from s3cl.errors import ConfigError
from s3cl.semantic import dump_prototypes, load_prototypes


def two_clouds(rng, separation=10.0, spread=0.5, sizes=(16, 8), dim=4):
    """Planted pair of clusters with centers ``separation`` apart.

    Unequal sizes keep the initial global-mean prototype decisively inside
    the margin for one cloud and outside it for the other.
    """
    offset = np.zeros(dim)
    offset[0] = separation
    a = spread * (rng.random((sizes[0], dim)) - 0.5)
    b = offset + spread * (rng.random((sizes[1], dim)) - 0.5)
    return np.vstack([a, b]), np.repeat([0, 1], sizes)


def lloyd_one_step(points, centers):
    """Independent single k-means iteration: nearest-mean assign, then mean."""
    labels = np.array(
        [int(np.argmin([(p - c) @ (p - c) for c in centers])) for p in points]
    )
    new_centers = np.array(
        [points[labels == j].mean(axis=0) for j in range(len(centers)) if (labels == j).any()]
    )
    return labels, new_centers


class TestInferPrototypes:
    def test_identical_rows_single_prototype(self):
        h = np.tile([2.0, -1.0, 0.5], (7, 1))
        state = infer_prototypes(h, PrototypeInferenceConfig(xi=0.1))
        assert state.k == 1
        assert (state.z == 0).all()
        assert state.c[0] == pytest.approx([2.0, -1.0, 0.5])

    def test_margin_above_max_pairwise_distance_never_spawns(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(20, 3))
        max_sq = max(((a - b) ** 2).sum() for a in h for b in h)
        state = infer_prototypes(h, PrototypeInferenceConfig(xi=max_sq + 1.0))
        assert state.k == 1
        assert state.c[0] == pytest.approx(h.mean(axis=0))

    def test_infinite_margin_is_one_means(self):
        rng = np.random.default_rng(1)
        h = rng.normal(size=(15, 5)) * 100.0
        state = infer_prototypes(h, PrototypeInferenceConfig(xi=np.inf))
        assert state.k == 1
        assert state.c[0] == pytest.approx(h.mean(axis=0))
        assert state.converged

    def test_planted_two_clouds(self):
        rng = np.random.default_rng(2)
        h, truth = two_clouds(rng, separation=10.0, spread=0.5)
        state = infer_prototypes(h, PrototypeInferenceConfig(xi=25.0))
        assert state.k == 2
        # planted partition up to cluster-id permutation
        matches = (state.z == truth).all() or (state.z == 1 - truth).all()
        assert matches

    def test_one_sweep_equals_lloyd_iteration(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(30, 3))
        centers = points[[3, 11, 25]] + 0.01
        state = infer_prototypes(
            points,
            PrototypeInferenceConfig(xi=np.inf, max_iters=1),
            initial_prototypes=centers,
        )
        labels, new_centers = lloyd_one_step(points, centers)
        assert np.array_equal(state.z, labels)
        assert state.c == pytest.approx(new_centers)

    def test_objective_monotone_on_random_fixtures(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            h = rng.normal(size=(int(rng.integers(3, 40)), int(rng.integers(1, 5))))
            xi = float(rng.uniform(0.05, 4.0))
            state = infer_prototypes(h, PrototypeInferenceConfig(xi=xi))
            trace = np.array(state.objective_trace)
            assert (np.diff(trace) <= 1e-9).all()
            assert state.k >= 1
            assert np.bincount(state.z, minlength=state.k).min() > 0

    def test_means_invariant_holds(self):
        rng = np.random.default_rng(5)
        h = rng.normal(size=(25, 3))
        state = infer_prototypes(h, PrototypeInferenceConfig(xi=1.0))
        for j in range(state.k):
            assert state.c[j] == pytest.approx(h[state.z == j].mean(axis=0))

    def test_invalid_margin(self):
        with pytest.raises(ConfigError):
            infer_prototypes(np.ones((3, 2)), PrototypeInferenceConfig(xi=0.0))


class TestRefineLabels:
    def make_transition(self, rng, n):
        upper = np.triu(rng.random((n, n)) < 0.4, k=1)
        edges = np.stack(np.nonzero(upper), axis=1).astype(np.int64)
        return normalized_adjacency(AttributedGraph(n, edges, np.zeros((n, 1))))

    def test_zero_steps_is_identity(self):
        rng = np.random.default_rng(6)
        t = self.make_transition(rng, 8)
        z = rng.integers(0, 3, size=8)
        out = refine_labels(z, 3, t, LabelPropagationConfig(steps=0, teleport=0.15))
        assert np.array_equal(out, z)

    def test_full_teleport_is_identity(self):
        rng = np.random.default_rng(7)
        t = self.make_transition(rng, 10)
        z = rng.integers(0, 4, size=10)
        out = refine_labels(z, 4, t, LabelPropagationConfig(steps=25, teleport=1.0))
        assert np.array_equal(out, z)

    def test_long_iteration_matches_closed_form(self):
        rng = np.random.default_rng(8)
        t = self.make_transition(rng, 6)
        z = rng.integers(0, 3, size=6)
        beta = 0.15
        out = refine_labels(z, 3, t, LabelPropagationConfig(steps=500, teleport=beta))
        onehot = np.zeros((6, 3))
        onehot[np.arange(6), z] = 1.0
        dense = t.matrix.toarray()
        closed = beta * np.linalg.solve(np.eye(6) - (1 - beta) * dense, onehot)
        assert np.array_equal(out, np.argmax(closed, axis=1))

    def test_invalid_teleport(self):
        rng = np.random.default_rng(9)
        t = self.make_transition(rng, 4)
        with pytest.raises(ConfigError):
            refine_labels(np.zeros(4, dtype=int), 1, t, LabelPropagationConfig(steps=1, teleport=0.0))


class TestRecomputePrototypes:
    def test_one_node_per_cluster(self):
        h = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
        state = recompute_prototypes(h, np.array([0, 1, 2]), 3)
        assert state.c == pytest.approx(h)

    def test_single_cluster_mean(self):
        h = np.arange(12.0).reshape(4, 3)
        state = recompute_prototypes(h, np.zeros(4, dtype=int), 1)
        assert state.c == pytest.approx(h.mean(axis=0)[None, :])

    def test_hand_means(self):
        h = np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]])
        state = recompute_prototypes(h, np.array([0, 0, 1]), 2)
        assert state.c == pytest.approx(np.array([[1.0, 0.0], [5.0, 5.0]]))

    def test_empty_cluster_compaction(self):
        h = np.array([[0.0], [4.0], [6.0]])
        state = recompute_prototypes(h, np.array([0, 2, 2]), 3)
        assert state.k == 2
        assert np.array_equal(state.z, [0, 1, 1])
        assert state.c == pytest.approx(np.array([[0.0], [5.0]]))


class TestSemanticLoss:
    def test_single_prototype_zero_loss(self):
        rng = np.random.default_rng(10)
        h = rng.normal(size=(9, 4))
        state = PrototypeState(c=h.mean(axis=0)[None, :], z=np.zeros(9, dtype=int), k=1)
        loss, grad = semantic_loss(h, state, tau2=1.0)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(h))

    def test_orthogonal_wrong_prototype(self):
        # node representation equals its prototype, orthogonal to the other
        h = np.tile([1.0, 0.0], (5, 1))
        state = PrototypeState(
            c=np.array([[2.0, 0.0], [0.0, 3.0]]), z=np.zeros(5, dtype=int), k=2
        )
        loss, _ = semantic_loss(h, state, tau2=1.0)
        assert loss == pytest.approx(5 * np.log(1 + np.exp(-1.0)), rel=1e-12)

    def test_matches_enumeration_and_finite_differences(self):
        rng = np.random.default_rng(11)
        h = rng.uniform(0.3, 1.0, size=(8, 3))
        c = rng.uniform(0.3, 1.0, size=(3, 3))
        z = rng.integers(0, 3, size=8)
        state = PrototypeState(c=c, z=z, k=3)
        tau = 0.9
        loss, grad = semantic_loss(h, state, tau)

        h_hat = h / np.linalg.norm(h, axis=1, keepdims=True)
        c_hat = c / np.linalg.norm(c, axis=1, keepdims=True)
        expected = 0.0
        for i in range(8):
            sims = np.array([h_hat[i] @ c_hat[j] / tau for j in range(3)])
            expected += -np.log(np.exp(sims[z[i]]) / np.exp(sims).sum())
        assert loss == pytest.approx(expected, rel=1e-12)

        step = 1e-6
        flat = h.ravel()
        for idx in rng.choice(flat.size, size=10, replace=False):
            original = flat[idx]
            flat[idx] = original + step
            up, _ = semantic_loss(h, state, tau)
            flat[idx] = original - step
            down, _ = semantic_loss(h, state, tau)
            flat[idx] = original
            assert (up - down) / (2 * step) == pytest.approx(
                grad.ravel()[idx], rel=1e-5, abs=1e-8
            )

    def test_per_node_bounds(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            k = int(rng.integers(1, 6))
            tau = float(rng.uniform(0.3, 2.0))
            h = rng.normal(size=(1, 4))
            state = PrototypeState(
                c=rng.normal(size=(k, 4)), z=np.array([int(rng.integers(0, k))]), k=k
            )
            loss, _ = semantic_loss(h, state, tau)
            assert -1e-12 <= loss <= np.log(k) + 2.0 / tau + 1e-12

    def test_zero_row_convention(self):
        h = np.array([[0.0, 0.0], [1.0, 0.0]])
        state = PrototypeState(c=np.array([[1.0, 0.0], [0.0, 1.0]]), z=np.array([0, 0]), k=2)
        loss, grad = semantic_loss(h, state, 1.0)
        assert np.isfinite(loss)
        assert np.array_equal(grad[0], [0.0, 0.0])

    def test_invalid_temperature(self):
        state = PrototypeState(c=np.ones((1, 2)), z=np.zeros(2, dtype=int), k=1)
        with pytest.raises(ConfigError):
            semantic_loss(np.ones((2, 2)), state, 0.0)


def test_prototype_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    state = PrototypeState(c=rng.normal(size=(3, 4)), z=rng.integers(0, 3, size=9), k=3)
    path = tmp_path / "proto.tsv"
    dump_prototypes(path, state)
    loaded = load_prototypes(path)
    assert loaded.k == 3
    assert np.array_equal(loaded.c, state.c)
    assert np.array_equal(loaded.z, state.z)
