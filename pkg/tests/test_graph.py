import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmagin.graph import (
    AdjacencyKind,
    FrameGraph,
    UtteranceFeatures,
    build_adjacency,
    graph_diameter,
    neighbor_matrix,
    segment_utterance,
)


def utterance(t, h=3, label=2, seed=0):
    frames = np.random.default_rng(seed).standard_normal((t, h))
    return UtteranceFeatures(frames, label, "u1", "spk")


def test_segment_long_utterance():
    graphs = segment_utterance(utterance(300), 120)
    assert [int(g.mask.sum()) for g in graphs] == [120, 120, 60]
    assert all(g.label == 2 for g in graphs)
    assert all(g.n == 120 for g in graphs)


def test_segment_exact_length():
    (g,) = segment_utterance(utterance(120), 120)
    assert g.mask.all()


def test_segment_short_utterance_zero_pads():
    (g,) = segment_utterance(utterance(5), 120)
    assert int(g.mask.sum()) == 5
    assert g.mask[:5].all()
    np.testing.assert_array_equal(g.node_features[5:], 0.0)


def test_segment_rejects_small_graph_len():
    with pytest.raises(ValueError):
        segment_utterance(utterance(10), 2)


def test_empty_utterance_rejected():
    with pytest.raises(ValueError):
        UtteranceFeatures(np.zeros((0, 3)), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 400), st.integers(3, 50), st.integers(1, 4))
def test_segments_reassemble_original(t, graph_len, h):
    u = utterance(t, h)
    graphs = segment_utterance(u, graph_len)
    assert len(graphs) == -(-t // graph_len)
    rebuilt = np.concatenate([g.node_features[g.mask] for g in graphs])
    np.testing.assert_array_equal(rebuilt, u.frames)


def test_cycle_neighbors_n4():
    nb = build_adjacency(4, AdjacencyKind.CYCLE)
    assert set(nb.lists[0]) == {3, 1}
    assert set(nb.lists[2]) == {1, 3}


def test_full_neighbors_n4():
    nb = build_adjacency(4, "full")
    assert all(len(lst) == 3 for lst in nb.lists)


def test_cycle_first_joined_to_last():
    nb = build_adjacency(120, "cycle")
    assert 119 in nb.lists[0] and 0 in nb.lists[119]


def test_adjacency_needs_three_nodes():
    with pytest.raises(ValueError):
        build_adjacency(2, "cycle")


def test_neighbor_matrix_examples():
    g3 = FrameGraph(np.zeros((3, 1)), np.ones(3, bool), 0)
    np.testing.assert_array_equal(neighbor_matrix(g3), np.ones((3, 3)) - np.eye(3))
    g4 = FrameGraph(np.zeros((4, 1)), np.ones(4, bool), 0)
    assert neighbor_matrix(g4).sum(axis=1).tolist() == [2.0] * 4
    full5 = build_adjacency(5, "full")
    assert neighbor_matrix(full5).sum(axis=1).tolist() == [4.0] * 5


def test_graph_requires_real_node():
    with pytest.raises(ValueError):
        FrameGraph(np.zeros((4, 1)), np.zeros(4, bool), 0)


@pytest.mark.parametrize("n", [3, 4, 5, 8, 17, 120])
def test_cycle_structure(n):
    nb = build_adjacency(n, "cycle")
    a = nb.dense
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all(a.sum(axis=1) == 2)
    assert graph_diameter(nb) == n // 2


@pytest.mark.parametrize("n", [3, 4, 9, 30])
def test_full_structure(n):
    nb = build_adjacency(n, "full")
    assert nb.is_symmetric()
    assert np.all(np.diag(nb.dense) == 0)
    assert graph_diameter(nb) == 1
