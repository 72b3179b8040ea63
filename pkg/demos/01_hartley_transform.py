"""
The discrete Hartley transform
==============================

A real-to-real transform with the cas kernel, computed here from one complex
FFT as Re - Im.  It is its own inverse up to scaling, and multiplying spectra
(with the mirrored-mode correction) performs circular convolution.
"""

import numpy as np

from hnoseg import spectral as sp
from hnoseg.tensor import Tensor

rng = np.random.default_rng(0)

# a 2-channel random volume
x = rng.standard_normal((2, 8, 8, 8))
H = sp.dht_forward(Tensor(x))
F = np.fft.fftn(x, axes=(1, 2, 3), norm="forward")
print("max |H - (Re F - Im F)|:", np.abs(H.coeffs.numpy() - (F.real - F.imag)).max())

# forward then inverse returns the input
print("roundtrip error:", np.abs(sp.dht_inverse(H).numpy() - x).max())

# the spectrum of a real volume is real, so no Hermitian bookkeeping is needed
print("spectrum dtype:", H.coeffs.dtype)

# per-mode weights R act as a circular convolution in space
R = rng.standard_normal((1, 2, 8, 8, 8))
y = sp.dht_inverse(sp.hartley_conv_full(H, sp.SpectralWeights("per-mode", Tensor(R)))).numpy()
kernel = sp.dht_inverse(sp.SpectrumReal(Tensor(R[0]), (8, 8, 8))).numpy() / 512
direct = sum(
    kernel[c][i, j, k] * np.roll(x[c], (i, j, k), axis=(0, 1, 2))
    for c in range(2) for i in range(8) for j in range(8) for k in range(8)
)
print("spectral vs direct circular convolution:", np.abs(y[0] - direct).max())
