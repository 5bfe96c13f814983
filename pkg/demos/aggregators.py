"""Two neighbourhoods that sum and mean cannot tell apart, and softmax can.

Node 0 hears {0.2, 0.2} in one graph and {0.0, 0.4} in the other.
"""

import numpy as np

from wmagin.aggregators import aggregate_mean, aggregate_softmax, aggregate_sum
from wmagin.tensor import Tensor

# node 0 listens to nodes 1 and 2
NEIGHBOURS = [[1, 2], [0], [0]]

for messages in ([0.2, 0.2], [0.0, 0.4]):
    x = Tensor(np.array([[0.0], *([m] for m in messages)]))
    row = {name: fn(x, NEIGHBOURS).data[0, 0]
           for name, fn in [("sum", aggregate_sum), ("mean", aggregate_mean),
                            ("softmax", aggregate_softmax)]}
    print(f"messages {messages}: " + "  ".join(f"{k}={v:.5f}" for k, v in row.items()))

print("sum and mean agree across the two graphs; softmax separates them.")
