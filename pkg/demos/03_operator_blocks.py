"""
Neural operator blocks
======================

FNO, HNO and HNO-XS blocks on a small feature map, plus two properties that
explain their behaviour: a shared linear spectral conv over every mode is a
pointwise channel mix, and chained frequency-domain steps need only one
transform pair.
"""

import numpy as np

from hnoseg import spectral as sp
from hnoseg.models import fno_block, hno_block, hno_xs_block
from hnoseg.tensor import Tensor, channel_linear, selu

rng = np.random.default_rng(1)
d, k = 4, (3, 3, 3)
u = Tensor(rng.standard_normal((d, 16, 16, 16)))
W = Tensor(rng.standard_normal((d, d)) / 2)
b = Tensor(np.zeros(d))

R_shared = sp.SpectralWeights("shared", Tensor(rng.standard_normal((d, d)) / 2))
R_complex = sp.SpectralWeights("shared", Tensor(rng.standard_normal((d, d)) / 2),
                               Tensor(rng.standard_normal((d, d)) / 2))
print("FNO block (shared complex weights):", fno_block(u, W, b, R_complex, k).shape)
print("HNO block:", hno_block(u, W, b, R_shared, k).shape)
Rs = [Tensor(rng.standard_normal((d, d)) / 4) for _ in range(3)]
print("HNO-XS block, three spectral steps:", hno_xs_block(u, Rs, k).shape)

# without cropping and without the spectral nonlinearity, the operator is local
R = rng.standard_normal((d, d))
full = sp.hartley_conv_shared(sp.dht_forward(u), sp.SpectralWeights("shared", Tensor(R)))
print("all modes == pointwise mix:",
      np.abs(sp.dht_inverse(full).numpy() - channel_linear(u, Tensor(R)).numpy()).max())

# three passes, each with its own transform pair, match the single-pair block
x = u
for Ri in Rs:
    spec = sp.mode_crop(sp.dht_forward(x), k)
    mixed = selu(spec.coeffs + channel_linear(spec.coeffs, Ri))
    x = sp.dht_inverse(sp.mode_pad(sp.SpectrumReal(mixed, spec.grid_size)))
print("telescoping error:", np.abs(selu(x).numpy() - hno_xs_block(u, Rs, k).numpy()).max())
