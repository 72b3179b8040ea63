"""
PCC loss and gradient checks
============================

The loss is one minus the rescaled Pearson correlation between scores and the
binary truth, averaged over labels.  Every differentiable op is verified
against central finite differences.
"""

import numpy as np

from hnoseg.gradcheck import gradient_suite
from hnoseg.objective import dice, pcc_loss
from hnoseg.tensor import Tensor

rng = np.random.default_rng(2)
y = (rng.random((2, 16, 16, 16)) < 0.3).astype(float)

print("perfect     :", pcc_loss(Tensor(y), y).item())
print("constant 0.5:", pcc_loss(Tensor(np.full(y.shape, 0.5)), y).item())
print("inverted    :", pcc_loss(Tensor(1 - y), y).item())
print("missing label contributes 0.5:",
      pcc_loss(Tensor(rng.random((1, 8, 8, 8))), np.zeros((1, 8, 8, 8))).item())
print("Dice of a noisy copy:", dice(np.clip(y + 0.3 * rng.standard_normal(y.shape), 0, 1), y))

results = gradient_suite(seed=0, n_configs=2)
worst = max(results, key=lambda r: r.rel_error)
print(f"{len(results)} finite-difference checks, worst {worst.name}: {worst.rel_error:.1e}")
