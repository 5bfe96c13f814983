"""Sum / mean / softmax neighbourhood aggregators and the weighted GIN update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import AdjacencyKind, Neighborhood
from .tensor import Tensor, exp, matmul, softmax, take


@dataclass(frozen=True)
class AggregatorWeights:
    """Fixed blend of the three aggregators (alpha: sum, beta: mean, gamma: softmax)."""

    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0
    gamma: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"aggregator weight {name} must be >= 0")


@dataclass
class WmaGinLayerParams:
    epsilon: Tensor
    mlp_weight: Tensor
    mlp_bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, h_in: int, h_out: int) -> "WmaGinLayerParams":
        bound = 1.0 / np.sqrt(h_in)
        return cls(
            Tensor(0.0, requires_grad=True),
            Tensor(rng.uniform(-bound, bound, (h_in, h_out)), requires_grad=True),
            Tensor(np.zeros(h_out), requires_grad=True),
        )


def as_neighborhood(neighbors) -> Neighborhood:
    if isinstance(neighbors, Neighborhood):
        return neighbors
    return Neighborhood.from_lists(neighbors)


def _use_index_path(nb: Neighborhood) -> bool:
    return nb.kind is not AdjacencyKind.FULL


def _gather(x: Tensor, nb: Neighborhood) -> tuple[Tensor, np.ndarray | None]:
    """Neighbour features (..., n, d, h) plus a validity mask for ragged lists."""
    if nb.index is not None:
        return take(x, nb.index, axis=-2), None
    idx, valid = nb.padded
    return take(x, idx, axis=-2), valid


def _require_no_isolated(nb: Neighborhood, name: str) -> None:
    if np.any(nb.degrees == 0):
        bad = np.flatnonzero(nb.degrees == 0).tolist()
        raise ValueError(f"{name} aggregation undefined for isolated nodes {bad}")


def aggregate_sum(x: Tensor, neighbors) -> Tensor:
    nb = as_neighborhood(neighbors)
    if not _use_index_path(nb):
        return matmul(nb.dense, x)
    gathered, valid = _gather(x, nb)
    if valid is not None:
        gathered = gathered * valid[:, :, None].astype(np.float64)
    return gathered.sum(axis=-2)


def aggregate_mean(x: Tensor, neighbors) -> Tensor:
    nb = as_neighborhood(neighbors)
    _require_no_isolated(nb, "mean")
    deg = nb.degrees.astype(np.float64)[:, None]
    return aggregate_sum(x, nb) / deg


def aggregate_softmax(x: Tensor, neighbors) -> Tensor:
    """Per feature dimension: sum_j x_j * softmax_j(x) over the neighbours of i."""
    nb = as_neighborhood(neighbors)
    _require_no_isolated(nb, "softmax")
    if _use_index_path(nb):
        gathered, valid = _gather(x, nb)
        scores = gathered
        if valid is not None:
            scores = gathered + np.where(valid, 0.0, -np.inf)[:, :, None]
        # softmax subtracts the max per node and dimension
        return (softmax(scores, axis=-2) * gathered).sum(axis=-2)
    # complete graph: one shift per graph and dimension; the ratio is shift-invariant
    shift = x.data.max(axis=-2, keepdims=True)
    e = exp(x - shift)
    return matmul(nb.dense, e * x) / matmul(nb.dense, e)


def wma_gin_forward(
    x_prev: Tensor,
    neighbors,
    params: WmaGinLayerParams,
    weights: AggregatorWeights,
) -> Tensor:
    """MLP((1 + eps) x_i + alpha*sum + beta*mean + gamma*softmax) for every node.

    Aggregators with zero weight are skipped, not multiplied by zero.
    """
    nb = as_neighborhood(neighbors)
    h = (1.0 + params.epsilon) * x_prev
    if weights.alpha:
        h = h + weights.alpha * aggregate_sum(x_prev, nb)
    if weights.beta:
        h = h + weights.beta * aggregate_mean(x_prev, nb)
    if weights.gamma:
        h = h + weights.gamma * aggregate_softmax(x_prev, nb)
    return matmul(h, params.mlp_weight) + params.mlp_bias


AGGREGATORS = {"sum": aggregate_sum, "mean": aggregate_mean, "softmax": aggregate_softmax}


def aggregate(x: Tensor, neighbors: Sequence[Sequence[int]] | Neighborhood, kind: str) -> Tensor:
    return AGGREGATORS[kind](x, neighbors)
