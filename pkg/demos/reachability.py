"""How far one layer reaches: cycle adjacency versus the fully-adjacent layer.

Backpropagate from a single output node of a 120-node graph and count
which input nodes receive a nonzero gradient.
"""

import numpy as np

from wmagin.aggregators import AggregatorWeights, WmaGinLayerParams, wma_gin_forward
from wmagin.graph import build_adjacency, graph_diameter
from wmagin.tensor import Tensor

n, h = 120, 4
rng = np.random.default_rng(0)
params = WmaGinLayerParams.init(rng, h, h)
x0 = rng.standard_normal((n, h))

for kind in ("cycle", "full"):
    nb = build_adjacency(n, kind)
    x = Tensor(x0.copy(), requires_grad=True)
    out = wma_gin_forward(x, nb, params, AggregatorWeights())
    seed = np.zeros((n, h))
    seed[60] = 1.0
    out.backward(seed)
    touched = np.flatnonzero(np.any(x.grad != 0, axis=1))
    shown = touched.tolist() if len(touched) < 8 else f"{len(touched)} nodes"
    print(f"{kind:5s}: diameter {graph_diameter(nb):2d}, node 60 depends on {shown}")
