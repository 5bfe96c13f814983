"""The full network: Bi-GRU, stacked WMA-GIN layers, multi-phase attention, stage heads."""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .aggregators import AggregatorWeights, WmaGinLayerParams, wma_gin_forward
from .graph import AdjacencyKind, FrameGraph, Neighborhood, build_adjacency
from .tensor import Tensor, concat, matmul, sigmoid, softmax, stack, tanh, transpose, unstack

CHECKPOINT_VERSION = 1

Params = dict[str, Tensor]


@dataclass
class ModelConfig:
    feature_dim: int = 78
    graph_len: int = 120
    gru_hidden_per_dir: int = 128
    gin_hidden: int = 256
    num_gin_layers: int = 4
    fa_layer_index: int = 2
    num_classes: int = 4
    aggregator_weights: AggregatorWeights = field(default_factory=AggregatorWeights)
    residual: bool = True
    # "mpa": head e reads the attention output; "gin": head e reads the last GIN layer
    stage_e_source: str = "mpa"

    def __post_init__(self):
        if isinstance(self.aggregator_weights, dict):
            self.aggregator_weights = AggregatorWeights(**self.aggregator_weights)
        if self.num_gin_layers < 1:
            raise ValueError("num_gin_layers must be >= 1")
        if self.gin_hidden <= 0 or self.gru_hidden_per_dir <= 0 or self.feature_dim <= 0:
            raise ValueError("layer widths must be positive")
        if self.fa_layer_index and not 1 <= self.fa_layer_index <= self.num_gin_layers:
            raise ValueError(
                f"fa_layer_index must lie in [1, {self.num_gin_layers}] (0 disables FA), "
                f"got {self.fa_layer_index}"
            )
        if self.graph_len < 3:
            raise ValueError("graph_len must be >= 3")
        if self.stage_e_source not in ("mpa", "gin"):
            raise ValueError(f"stage_e_source must be 'mpa' or 'gin', got {self.stage_e_source!r}")

    @property
    def num_stages(self) -> int:
        """Number of terms in the multi-stage loss: GIN heads, head e, and G."""
        return self.num_gin_layers + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class StageLogits:
    a: Tensor
    gin: list[Tensor]
    e: Tensor
    G: Tensor

    @property
    def b(self) -> Tensor:
        return self.gin[0]

    @property
    def c(self) -> Tensor:
        return self.gin[1]

    @property
    def d(self) -> Tensor:
        return self.gin[2]

    def stages(self) -> list[Tensor]:
        """Loss stages in ascending depth: GIN heads, e, then G."""
        return [*self.gin, self.e, self.G]


# ---- parameters -----------------------------------------------------------
def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def head_names(config: ModelConfig) -> list[str]:
    return ["a", *[f"gin{l}" for l in range(1, config.num_gin_layers)], "e"]


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases and epsilons."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, hid, d, c = config.feature_dim, config.gru_hidden_per_dir, config.gin_hidden, config.num_classes
    p: Params = {}
    for direction in ("fwd", "bwd"):
        for gate in ("z", "r", "h"):
            p[f"gru.{direction}.w_{gate}"] = _uniform(rng, h + hid, (h + hid, hid))
            p[f"gru.{direction}.b_{gate}"] = _zeros(hid)
    h_in = 2 * hid
    for l in range(1, config.num_gin_layers + 1):
        layer = WmaGinLayerParams.init(rng, h_in, d)
        p[f"gin{l}.eps"], p[f"gin{l}.weight"], p[f"gin{l}.bias"] = (
            layer.epsilon, layer.mlp_weight, layer.mlp_bias)
        h_in = d
    for name, fan_in in (("q", h), ("k", 2 * hid), ("v", d)):
        p[f"mpa.{name}.weight"] = _uniform(rng, fan_in, (fan_in, d))
        p[f"mpa.{name}.bias"] = _zeros(d)
    for name in head_names(config):
        fan_in = 2 * hid if name == "a" else d
        p[f"head.{name}.weight"] = _uniform(rng, fan_in, (fan_in, c))
        p[f"head.{name}.bias"] = _zeros(c)
    return p


def layer_params(params: Params, l: int) -> WmaGinLayerParams:
    return WmaGinLayerParams(params[f"gin{l}.eps"], params[f"gin{l}.weight"], params[f"gin{l}.bias"])


# ---- building blocks ------------------------------------------------------
def _gru_direction(x: Tensor, mask: np.ndarray, params: Params, direction: str, reverse: bool) -> Tensor:
    h_dim = x.shape[-1]
    w = {g: params[f"gru.{direction}.w_{g}"] for g in "zrh"}
    b = {g: params[f"gru.{direction}.b_{g}"] for g in "zrh"}
    hid = w["z"].shape[1]
    # input half of each gate matrix applied to all steps at once
    wx = concat([w["z"][:h_dim], w["r"][:h_dim], w["h"][:h_dim]], axis=1)
    bx = concat([b["z"], b["r"], b["h"]], axis=0)
    u_zr = concat([w["z"][h_dim:], w["r"][h_dim:]], axis=1)
    u_h = w["h"][h_dim:]
    steps = unstack(matmul(x, wx) + bx, axis=-2)
    m = mask.astype(np.float64)

    n = len(steps)
    state = Tensor(np.zeros(x.shape[:-2] + (hid,)))
    outputs: list[Tensor] = [None] * n  # type: ignore[list-item]
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        xp = steps[t]
        zr = sigmoid(xp[..., : 2 * hid] + matmul(state, u_zr))
        z, r = zr[..., :hid], zr[..., hid:]
        cand = tanh(xp[..., 2 * hid:] + matmul(r * state, u_h))
        gate = z * m[..., t, None] if not m[..., t].all() else z
        state = state + gate * (cand - state)
        outputs[t] = state
    return stack(outputs, axis=-2)


def bigru_forward(s: Tensor | np.ndarray, mask: np.ndarray | None, params: Params) -> Tensor:
    """Left-to-right and right-to-left GRU passes, concatenated on the feature axis.

    Padding positions (mask False) leave the hidden state unchanged.
    """
    s = s if isinstance(s, Tensor) else Tensor(s)
    if mask is None:
        mask = np.ones(s.shape[:-1], dtype=bool)
    if s.ndim == 2:
        return bigru_forward(s.reshape(1, *s.shape), np.asarray(mask)[None], params)[0]
    fwd = _gru_direction(s, mask, params, "fwd", reverse=False)
    bwd = _gru_direction(s, mask, params, "bwd", reverse=True)
    return concat([fwd, bwd], axis=-1)


@lru_cache(maxsize=64)
def _layer_adjacency(n: int, kind: AdjacencyKind) -> Neighborhood:
    return build_adjacency(n, kind)


def layer_kinds(config: ModelConfig) -> list[AdjacencyKind]:
    return [
        AdjacencyKind.FULL if l == config.fa_layer_index else AdjacencyKind.CYCLE
        for l in range(1, config.num_gin_layers + 1)
    ]


def gin_stack_forward(g: Tensor, params: Params, config: ModelConfig) -> list[Tensor]:
    """Outputs of every WMA-GIN layer; layers after the first add their input back."""
    n = g.shape[-2]
    outs = []
    x = g
    for l, kind in enumerate(layer_kinds(config), start=1):
        y = wma_gin_forward(x, _layer_adjacency(n, kind), layer_params(params, l),
                            config.aggregator_weights)
        if config.residual and l >= 2:
            y = y + x
        outs.append(y)
        x = y
    return outs


def _key_bias(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, -np.inf)[..., None, :]


def mpa_forward(s, g: Tensor, x_last: Tensor, params: Params, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with Q from raw features, K from the Bi-GRU, V from the last GIN layer."""
    s = s if isinstance(s, Tensor) else Tensor(s)
    q = matmul(s, params["mpa.q.weight"]) + params["mpa.q.bias"]
    k = matmul(g, params["mpa.k.weight"]) + params["mpa.k.bias"]
    v = matmul(x_last, params["mpa.v.weight"]) + params["mpa.v.bias"]
    scores = matmul(q, transpose(k)) / np.sqrt(q.shape[-1])
    if mask is not None and not np.all(mask):
        scores = scores + _key_bias(np.asarray(mask, dtype=bool))
    return matmul(softmax(scores, axis=-1), v)


def readout(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over real (mask True) nodes."""
    if mask is None:
        return x.mean(axis=-2)
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("readout needs at least one real node per graph")
    m = mask.astype(np.float64)[..., None]
    return (x * m).sum(axis=-2) / counts[..., None].astype(np.float64)


def _head(params: Params, name: str, pooled: Tensor) -> Tensor:
    return matmul(pooled, params[f"head.{name}.weight"]) + params[f"head.{name}.bias"]


def forward_batch(features, mask: np.ndarray, params: Params, config: ModelConfig) -> StageLogits:
    """Forward pass over a batch of equal-size graphs (features B x n x h, mask B x n)."""
    s = features if isinstance(features, Tensor) else Tensor(features)
    mask = np.asarray(mask, dtype=bool)
    g = bigru_forward(s, mask, params)
    gins = gin_stack_forward(g, params, config)
    a = _head(params, "a", readout(g, mask))
    stage_gin = [_head(params, f"gin{l}", readout(x, mask)) for l, x in enumerate(gins[:-1], start=1)]
    if config.stage_e_source == "mpa":
        e_in = mpa_forward(s, g, gins[-1], params, mask)
    else:
        e_in = gins[-1]
    e = _head(params, "e", readout(e_in, mask))
    total = a
    for t in stage_gin:
        total = total + t
    total = total + e
    return StageLogits(a, stage_gin, e, total)


def model_forward(graph: FrameGraph, params: Params, config: ModelConfig) -> StageLogits:
    """Single-graph forward; every logit vector has length num_classes."""
    out = forward_batch(graph.node_features[None], graph.mask[None], params, config)
    return StageLogits(out.a[0], [t[0] for t in out.gin], out.e[0], out.G[0])


def predict(features: np.ndarray, mask: np.ndarray, params: Params, config: ModelConfig) -> np.ndarray:
    """Argmax of the summed logits G; ties go to the lowest class index."""
    logits = forward_batch(features, mask, params, config).G.data
    return np.argmax(logits, axis=-1)


# ---- checkpoints ----------------------------------------------------------
def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_dict(params: Params, config: ModelConfig, extra: dict | None = None) -> dict:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, params: Params, config: ModelConfig, extra: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(checkpoint_dict(params, config, extra)))


def params_from_dict(doc: dict) -> tuple[Params, ModelConfig]:
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    config = ModelConfig.from_dict(doc["model_config"])
    params = {
        name: Tensor(np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]),
                     requires_grad=True)
        for name, entry in doc["params"].items()
    }
    expected = init_params(config, 0)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"checkpoint parameters mismatch: missing {missing}, unexpected {extra}")
    for name, t in expected.items():
        if params[name].shape != t.shape:
            raise ValueError(f"parameter {name}: shape {params[name].shape} != expected {t.shape}")
    return params, config


def load_checkpoint(path) -> tuple[Params, ModelConfig]:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
