"""
Segmentation networks and their size
====================================

Four variants share one layout: a stride-2 input conv, n_B operator blocks,
trilinear upsampling and a 1x1 output layer.  Shared spectral weights keep the
parameter count independent of the number of modes.
"""

import numpy as np

from hnoseg.models import ModelConfig, build_network, param_count
from hnoseg.tensor import Tensor

for variant in ("fno", "fnoseg", "hnoseg", "hnoseg-xs"):
    n_xs = 3 if variant == "hnoseg-xs" else 1
    cfg = ModelConfig(variant=variant, d=24, n_blocks=8, n_xs=n_xs, k_max=(14, 14, 10))
    print(f"{variant:10s} {param_count(cfg):>12,d} parameters")

# a small model runs at any even resolution that leaves room for the band
model = build_network(ModelConfig(d=8, n_xs=2, k_max=(4, 4, 4)), seed=0)
rng = np.random.default_rng(0)
for n in (32, 48, 64):
    x = Tensor(rng.standard_normal((4, n, n, n)))
    print(f"input {n}^3 -> scores {model(x).shape}")
