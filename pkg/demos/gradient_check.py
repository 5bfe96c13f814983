"""Finite differences against backpropagation for every parameter of a tiny model."""

from wmagin.gradcheck import TINY_CONFIG, model_gradcheck

errors = model_gradcheck(seed=0)
for name, err in sorted(errors.items(), key=lambda kv: -kv[1])[:8]:
    print(f"{name:18s} {err:.2e}")
print(f"... {len(errors)} tensors checked on a {TINY_CONFIG.graph_len}-node graph; "
      f"worst relative error {max(errors.values()):.2e}")
