"""Frame-sequence to graph conversion: segmentation, padding, topology."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class AdjacencyKind(str, enum.Enum):
    CYCLE = "cycle"
    FULL = "full"


@dataclass
class UtteranceFeatures:
    frames: np.ndarray
    label: int
    utterance_id: str = ""
    group_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError(
                f"utterance {self.utterance_id!r}: frames must be a non-empty T x h matrix, "
                f"got shape {self.frames.shape}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"utterance {self.utterance_id!r}: non-finite feature values")
        self.label = int(self.label)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class Neighborhood:
    """Neighbor index lists for ``n`` nodes, each list sorted ascending."""

    kind: AdjacencyKind | None
    lists: tuple[tuple[int, ...], ...]

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]]) -> "Neighborhood":
        return cls(None, tuple(tuple(sorted(int(j) for j in nb)) for nb in lists))

    @property
    def n(self) -> int:
        return len(self.lists)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.lists], dtype=np.int64)

    @cached_property
    def index(self) -> np.ndarray | None:
        """n x d index array when every node has the same degree, else None."""
        if self.n == 0 or len(set(self.degrees.tolist())) != 1:
            return None
        return np.array(self.lists, dtype=np.int64).reshape(self.n, -1)

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """(n x d_max index array, n x d_max validity mask); padding slots point at node 0."""
        width = max(int(self.degrees.max()), 1) if self.n else 1
        idx = np.zeros((self.n, width), dtype=np.int64)
        valid = np.zeros((self.n, width), dtype=bool)
        for i, nb in enumerate(self.lists):
            idx[i, : len(nb)] = nb
            valid[i, : len(nb)] = True
        return idx, valid

    @cached_property
    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, nb in enumerate(self.lists):
            a[i, list(nb)] = 1.0
        return a

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.dense, self.dense.T))


def build_adjacency(n: int, kind: AdjacencyKind | str) -> Neighborhood:
    """Cycle: i <-> i+1 (mod n).  Full: every distinct pair."""
    kind = AdjacencyKind(kind)
    if n < 3:
        raise ValueError(f"graphs need at least 3 nodes, got {n}")
    if kind is AdjacencyKind.CYCLE:
        lists = [sorted({(i - 1) % n, (i + 1) % n}) for i in range(n)]
    else:
        lists = [[j for j in range(n) if j != i] for i in range(n)]
    return Neighborhood(kind, tuple(tuple(nb) for nb in lists))


@dataclass
class FrameGraph:
    node_features: np.ndarray
    mask: np.ndarray
    label: int
    kind: AdjacencyKind = AdjacencyKind.CYCLE
    utterance_id: str = ""
    group_id: str = ""
    neighbors: Neighborhood = field(init=False, repr=False)

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.node_features.shape[0],):
            raise ValueError("mask length must equal the number of nodes")
        if not self.mask.any():
            raise ValueError("a graph needs at least one real (unmasked) node")
        self.neighbors = build_adjacency(self.n, self.kind)

    @property
    def n(self) -> int:
        return self.node_features.shape[0]


def segment_utterance(u: UtteranceFeatures, graph_len: int = 120) -> list[FrameGraph]:
    """Cut ``u`` into ceil(T / graph_len) graphs, zero-padding the last one."""
    if graph_len < 3:
        raise ValueError(f"graph_len must be >= 3, got {graph_len}")
    frames = u.frames
    if frames.shape[0] == 0:
        raise ValueError(f"utterance {u.utterance_id!r} is empty")
    t, h = frames.shape
    graphs = []
    for k in range(math.ceil(t / graph_len)):
        chunk = frames[k * graph_len:(k + 1) * graph_len]
        feats = np.zeros((graph_len, h))
        feats[: len(chunk)] = chunk
        mask = np.zeros(graph_len, dtype=bool)
        mask[: len(chunk)] = True
        graphs.append(
            FrameGraph(feats, mask, u.label, utterance_id=u.utterance_id, group_id=u.group_id)
        )
    return graphs


def neighbor_matrix(g: FrameGraph | Neighborhood) -> np.ndarray:
    """Binary symmetric n x n adjacency with zero diagonal."""
    nb = g.neighbors if isinstance(g, FrameGraph) else g
    return nb.dense.copy()


def graph_diameter(nb: Neighborhood) -> int:
    """Longest shortest path (BFS from every node); -1 if disconnected."""
    worst = 0
    for s in range(nb.n):
        dist = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for i in frontier:
                for j in nb.lists[i]:
                    if j not in dist:
                        dist[j] = dist[i] + 1
                        nxt.append(j)
            frontier = nxt
        if len(dist) != nb.n:
            return -1
        worst = max(worst, max(dist.values()))
    return worst


def batch_graphs(graphs: Sequence[FrameGraph]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack equal-size graphs into (features B x n x h, mask B x n, labels B)."""
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise ValueError("all graphs in a batch must share the same node count")
    feats = np.stack([g.node_features for g in graphs])
    mask = np.stack([g.mask for g in graphs])
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    return feats, mask, labels
