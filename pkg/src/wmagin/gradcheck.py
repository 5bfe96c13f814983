"""Central finite-difference checks of autodiff gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .model import ModelConfig, Params, forward_batch, init_params
from .tensor import Tensor
from .trainer import multi_stage_loss


def relative_error(autodiff: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|ad - fd| / max(1, |fd|), elementwise."""
    return np.abs(autodiff - numeric) / np.maximum(1.0, np.abs(numeric))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor],
                    step: float = 1e-6) -> dict[str, float]:
    """Max relative error per named tensor between backward() and central differences."""
    for t in tensors.values():
        t.grad = None
    loss_fn().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        numeric = numeric_gradient(lambda: loss_fn().item(), t.data, step)
        errors[name] = float(relative_error(analytic[name], numeric).max())
    return errors


TINY_CONFIG = ModelConfig(
    feature_dim=3, graph_len=6, gru_hidden_per_dir=4, gin_hidden=8,
    num_gin_layers=2, fa_layer_index=2, num_classes=4,
)


def tiny_problem(seed: int = 0, config: ModelConfig = TINY_CONFIG):
    """Two random graphs (the second partly padded) with parameters and labels."""
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    # non-zero biases and epsilons so every term is exercised
    for name, p in params.items():
        if name.endswith(("bias", "eps")) or ".b_" in name:
            p.data = rng.uniform(-0.3, 0.3, p.shape)
    feats = rng.standard_normal((2, config.graph_len, config.feature_dim))
    mask = np.ones((2, config.graph_len), dtype=bool)
    mask[1, config.graph_len - 2:] = False
    feats[1, config.graph_len - 2:] = 0.0
    labels = rng.integers(0, config.num_classes, 2)
    return params, feats, mask, labels


def model_gradcheck(seed: int = 0, config: ModelConfig = TINY_CONFIG,
                    step: float = 1e-6) -> dict[str, float]:
    """Gradient check of the multi-stage loss w.r.t. every model parameter."""
    params, feats, mask, labels = tiny_problem(seed, config)

    def loss() -> Tensor:
        return multi_stage_loss(forward_batch(feats, mask, params, config).stages(), labels)

    return check_gradients(loss, params, step)
