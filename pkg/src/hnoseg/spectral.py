"""Hartley and Fourier transforms, mode truncation and spectral convolutions.

Transforms act on every axis after the leading channel axis.  The forward
transforms divide by the number of grid points and the inverses do not, so
the retained low-frequency coefficients of a band-limited field do not depend
on the sampling resolution.

Cropped spectra keep, per axis, the indices ``0..k-1`` followed by
``N-k..N-1``.  Read cyclically, that block of ``2k`` entries is itself a
periodic frequency axis, which is how mirrored (``N - k``) indices are taken
inside the band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, channel_linear, record, scale, selu, take

__all__ = [
    "SpectrumReal", "SpectrumComplex", "SpectralWeights",
    "dht_forward", "dht_inverse", "dft_forward", "dft_inverse",
    "mode_crop", "mode_pad", "band_indices", "conjugate_sign",
    "hartley_conv_full", "hartley_conv_shared", "hartley_conv_shared_nonlinear",
    "fourier_conv_shared", "fourier_conv_per_mode", "mode_matmul", "mirror_modes",
    "band_limit",
]


@dataclass(frozen=True)
class SpectrumReal:
    """Hartley coefficients ``[C, *band]`` of a field sampled on ``grid_size``."""

    coeffs: Tensor
    grid_size: Optional[tuple] = None

    @property
    def band(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def is_full(self) -> bool:
        return self.grid_size is None or self.band == tuple(self.grid_size)


@dataclass(frozen=True)
class SpectrumComplex:
    """Fourier coefficients stored as a real/imaginary pair of tensors."""

    real: Tensor
    imag: Tensor
    grid_size: Optional[tuple] = None

    @property
    def band(self) -> tuple:
        return self.real.shape[1:]

    @property
    def channels(self) -> int:
        return self.real.shape[0]

    @property
    def is_full(self) -> bool:
        return self.grid_size is None or self.band == tuple(self.grid_size)

    def to_numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


@dataclass
class SpectralWeights:
    """Channel-mixing weights applied in the frequency domain (no bias).

    ``shared`` weights are ``[Cout, Cin]``; ``per-mode`` weights carry the
    cropped band as trailing axes.  ``imag`` is only used by Fourier layers.
    """

    mode: str
    real: Tensor
    imag: Optional[Tensor] = None

    def __post_init__(self):
        if self.mode not in ("shared", "per-mode"):
            raise ValueError(f"unknown spectral weight mode {self.mode!r}")
        if self.mode == "shared" and self.real.ndim != 2:
            raise ValueError(f"shared weights must be [Cout, Cin], got {self.real.shape}")
        if self.imag is not None and self.imag.shape != self.real.shape:
            raise ValueError(f"imag {self.imag.shape} vs real {self.real.shape}")

    @property
    def n_params(self) -> int:
        return self.real.size + (self.imag.size if self.imag is not None else 0)


def _spatial_axes(ndim: int) -> tuple:
    return tuple(range(1, ndim))


def _dht(arr: np.ndarray, norm: str) -> np.ndarray:
    f = np.fft.fftn(arr, axes=_spatial_axes(arr.ndim), norm=norm)
    return (f.real - f.imag).astype(arr.dtype, copy=False)


def dht_forward(x: Tensor) -> SpectrumReal:
    """Multidimensional DHT, ``cas`` kernel over the summed phase, scaled by 1/N."""
    out = _dht(x.data, "forward")
    coeffs = record(out, (x,), lambda g: (_dht(g, "forward"),))
    return SpectrumReal(coeffs, tuple(x.shape[1:]))


def dht_inverse(spec: SpectrumReal) -> Tensor:
    """Unnormalized inverse DHT; the spectrum must cover the full grid."""
    if not spec.is_full:
        raise ValueError(
            f"dht_inverse: spectrum band {spec.band} is cropped from grid "
            f"{spec.grid_size}; pad it with mode_pad first")
    c = spec.coeffs
    return record(_dht(c.data, "backward"), (c,), lambda g: (_dht(g, "backward"),))


def dft_forward(x: Tensor) -> SpectrumComplex:
    axes = _spatial_axes(x.ndim)
    f = np.fft.fftn(x.data, axes=axes, norm="forward")
    stacked = np.stack([f.real, f.imag]).astype(x.dtype, copy=False)

    def vjp(g):
        back = np.fft.ifftn(g[0] + 1j * g[1], axes=axes, norm="backward")
        return (back.real.astype(g.dtype, copy=False),)

    both = record(stacked, (x,), vjp)
    return SpectrumComplex(take(both, 0), take(both, 1), tuple(x.shape[1:]))


def dft_inverse(spec: SpectrumComplex) -> Tensor:
    """Real part of the unnormalized inverse DFT."""
    if not spec.is_full:
        raise ValueError(
            f"dft_inverse: spectrum band {spec.band} is cropped from grid "
            f"{spec.grid_size}; pad it with mode_pad first")
    re, im = spec.real, spec.imag
    axes = _spatial_axes(re.ndim)
    out = np.fft.ifftn(re.data + 1j * im.data, axes=axes, norm="forward").real

    def vjp(g):
        f = np.fft.fftn(g, axes=axes, norm="backward")
        return f.real.astype(g.dtype, copy=False), f.imag.astype(g.dtype, copy=False)

    return record(out.astype(re.dtype, copy=False), (re, im), vjp)


# ------------------------------------------------------------ mode handling

def band_indices(n: int, k: int) -> np.ndarray:
    return np.concatenate([np.arange(k), np.arange(n - k, n)])


def _gather(x: Tensor, indices: Sequence[np.ndarray], lead: int = 1) -> Tensor:
    """Index trailing axes (after ``lead`` leading axes) with index arrays."""
    shape = x.shape
    out = x.data
    for ax, ind in enumerate(indices, start=lead):
        out = np.take(out, ind, axis=ax)
    full = (slice(None),) * lead

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[full + np.ix_(*indices)] = g
        return (gx,)

    return record(out, (x,), vjp)


def _scatter(x: Tensor, indices: Sequence[np.ndarray], shape: tuple) -> Tensor:
    sel = (slice(None),) + np.ix_(*indices)
    out = np.zeros(shape, dtype=x.dtype)
    out[sel] = x.data
    return record(out, (x,), lambda g: (g[sel],))


def _check_kmax(grid: tuple, k_max: Sequence[int]) -> tuple:
    k_max = tuple(int(k) for k in k_max)
    if len(k_max) != len(grid):
        raise ValueError(f"k_max {k_max} has {len(k_max)} entries for grid {grid}")
    for axis, (n, k) in enumerate(zip(grid, k_max)):
        if k < 1 or 2 * k > n:
            raise ValueError(
                f"k_max[{axis}]={k} is invalid for grid size {n} (need 1 <= 2k <= N)")
    return k_max


def mode_crop(spec, k_max: Sequence[int]):
    """Keep the ``2k`` lowest positive and negative frequencies per axis."""
    if not spec.is_full:
        raise ValueError("mode_crop: spectrum is already cropped")
    grid = spec.band
    k_max = _check_kmax(grid, k_max)
    idx = [band_indices(n, k) for n, k in zip(grid, k_max)]
    if isinstance(spec, SpectrumComplex):
        return SpectrumComplex(_gather(spec.real, idx), _gather(spec.imag, idx), grid)
    return SpectrumReal(_gather(spec.coeffs, idx), grid)


def mode_pad(spec, grid_size: Optional[Sequence[int]] = None):
    """Embed a cropped band back into a zero spectrum of the full grid."""
    grid = tuple(grid_size) if grid_size is not None else spec.grid_size
    if grid is None:
        raise ValueError("mode_pad: spectrum carries no grid size")
    band = spec.band
    if band == grid:
        return spec  # nothing was cropped (also covers odd grids)
    for axis, (n, b) in enumerate(zip(grid, band)):
        if b % 2 or b > n:
            raise ValueError(f"mode_pad: band {band} does not fit grid {grid} on axis {axis}")
    idx = [band_indices(n, b // 2) for n, b in zip(grid, band)]
    if isinstance(spec, SpectrumComplex):
        shape = (spec.channels,) + grid
        return SpectrumComplex(_scatter(spec.real, idx, shape),
                               _scatter(spec.imag, idx, shape), grid)
    return SpectrumReal(_scatter(spec.coeffs, idx, (spec.channels,) + grid), grid)


def mirror_modes(x: Tensor, lead: int = 1) -> Tensor:
    """Map every mode k to its negation, cyclically within the stored band."""
    idx = [(-np.arange(n)) % n for n in x.shape[lead:]]
    return _gather(x, idx, lead=lead)


def conjugate_sign(band: Sequence[int], grid_size: Sequence[int]) -> np.ndarray:
    """Half-space indicator over a cropped band: +1, -1, or 0 if self-conjugate.

    The sign of a mode is the sign of its first non-self-conjugate frequency
    component, so ``sign(-k) == -sign(k)``.
    """
    freqs = []
    for b, n in zip(band, grid_size):
        k = b // 2
        f = np.concatenate([np.arange(k), np.arange(-k, 0)]) if b < n else \
            np.where(np.arange(n) < (n + 1) // 2, np.arange(n), np.arange(n) - n)
        freqs.append(f)
    grids = np.meshgrid(*freqs, indexing="ij")
    sign = np.zeros(tuple(band), dtype=np.int8)
    undecided = np.ones(tuple(band), dtype=bool)
    for f, n in zip(grids, grid_size):
        self_conj = (f == 0) | (2 * f == n) | (2 * f == -n)
        decide = undecided & ~self_conj
        sign[decide] = np.sign(f[decide])
        undecided &= self_conj
    return sign


def mode_matmul(R: Tensor, U: Tensor) -> Tensor:
    """Per-mode matrix-vector product ``out[:, k] = R[:, :, k] @ U[:, k]``."""
    cout, cin = R.shape[:2]
    band = U.shape[1:]
    if R.shape[2:] != band or cin != U.shape[0]:
        raise ValueError(f"mode_matmul: weights {R.shape} do not match spectrum {U.shape}")
    R3 = R.data.reshape(cout, cin, -1)
    U2 = U.data.reshape(cin, -1)
    out = np.einsum("oim,im->om", R3, U2)

    def vjp(g):
        g2 = g.reshape(cout, -1)
        gR = np.einsum("om,im->oim", g2, U2).reshape(R.shape) if R.requires_grad else None
        gU = np.einsum("oim,om->im", R3, g2).reshape(U.shape) if U.requires_grad else None
        return gR, gU

    return record(out.reshape((cout,) + band), (R, U), vjp)


# ---------------------------------------------------- spectral convolutions

def hartley_conv_full(spec: SpectrumReal, weights: SpectralWeights) -> SpectrumReal:
    """Hartley convolution theorem with a separate weight matrix per mode.

    ``out(k) = 1/2 [R(k)(U(k) + U(-k)) + R(-k)(U(k) - U(-k))]``
    """
    if weights.mode != "per-mode":
        raise ValueError("hartley_conv_full needs per-mode weights")
    U, R = spec.coeffs, weights.real
    if R.shape[2:] != spec.band or R.shape[1] != spec.channels:
        raise ValueError(f"hartley_conv_full: weights {R.shape} vs spectrum {U.shape}")
    U_neg = mirror_modes(U)
    R_neg = mirror_modes(R, lead=2)
    even = mode_matmul(R, U + U_neg)
    odd = mode_matmul(R_neg, U - U_neg)
    return SpectrumReal(scale(even + odd, 0.5), spec.grid_size)


def _shared_matrix(spec_channels: int, weights: SpectralWeights) -> Tensor:
    if weights.mode != "shared":
        raise ValueError("expected shared spectral weights")
    if weights.real.shape[1] != spec_channels:
        raise ValueError(
            f"spectral weights {weights.real.shape} do not match {spec_channels} channels")
    return weights.real


def hartley_conv_shared(spec: SpectrumReal, weights: SpectralWeights) -> SpectrumReal:
    R = _shared_matrix(spec.channels, weights)
    return SpectrumReal(channel_linear(spec.coeffs, R), spec.grid_size)


def hartley_conv_shared_nonlinear(spec: SpectrumReal, weights: SpectralWeights) -> SpectrumReal:
    """Shared Hartley convolution followed by SELU on every coefficient."""
    out = hartley_conv_shared(spec, weights)
    return SpectrumReal(selu(out.coeffs), spec.grid_size)


def fourier_conv_shared(spec: SpectrumComplex, weights: SpectralWeights) -> SpectrumComplex:
    """One complex matrix for all modes, conjugated on the negative half-space.

    Using ``R`` at ``k`` and ``conj(R)`` at ``-k`` keeps the product spectrum
    Hermitian, so the imaginary part of ``R`` survives the real inverse.
    """
    R_re = _shared_matrix(spec.channels, weights)
    if weights.imag is None:
        raise ValueError("fourier_conv_shared needs complex weights")
    R_im = weights.imag
    grid = spec.grid_size or spec.band
    sign = conjugate_sign(spec.band, grid).astype(spec.real.dtype)
    mask = Tensor._wrap(np.broadcast_to(sign, (R_re.shape[0],) + spec.band).copy())

    re = channel_linear(spec.real, R_re) - mask * channel_linear(spec.imag, R_im)
    im = channel_linear(spec.imag, R_re) + mask * channel_linear(spec.real, R_im)
    return SpectrumComplex(re, im, spec.grid_size)


def fourier_conv_per_mode(spec: SpectrumComplex, weights: SpectralWeights) -> SpectrumComplex:
    if weights.mode != "per-mode" or weights.imag is None:
        raise ValueError("fourier_conv_per_mode needs complex per-mode weights")
    R_re, R_im = weights.real, weights.imag
    re = mode_matmul(R_re, spec.real) - mode_matmul(R_im, spec.imag)
    im = mode_matmul(R_re, spec.imag) + mode_matmul(R_im, spec.real)
    return SpectrumComplex(re, im, spec.grid_size)


def band_limit(x: Tensor, k_max: Sequence[int]) -> Tensor:
    """Project a field onto its retained Hartley modes."""
    return dht_inverse(mode_pad(mode_crop(dht_forward(x), k_max)))
