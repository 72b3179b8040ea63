"""Neural operator blocks and segmentation network assembly.

Four block types are available: the FNO block (Fourier kernel, shared or
per-mode weights), the HNO block (Hartley kernel with an optional nonlinearity
in the frequency domain) and the HNO-XS block, which chains several residual
nonlinear frequency-domain convolutions between one forward and one inverse
Hartley transform.

Network layout (all variants)::

    conv k2 s2 (C_in -> d)            downsample + lift
    n_B x [block -> concat(in, out) -> 1x1 (2d -> d)]   block skips (not for fno)
    U-Net merges before the second half of the blocks    (hnoseg-xs only)
    trilinear x2 -> 1x1 (d -> L) -> sigmoid
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import spectral as sp
from .seeding import substream
from .tensor import (
    Tensor, add, channel_linear, concat_channels, conv3d_k2s2, selu, sigmoid,
    trilinear_resample,
)

VARIANTS = ("fno", "fnoseg", "hnoseg", "hnoseg-xs")


@dataclass
class ModelConfig:
    variant: str = "hnoseg-xs"
    d: int = 16
    n_blocks: int = 8
    n_xs: int = 1
    k_max: tuple = (6, 6, 6)
    in_channels: int = 4
    num_labels: int = 3
    spectral_nonlinearity: bool = True
    spectral_budget: Optional[int] = None

    def __post_init__(self):
        self.k_max = tuple(int(k) for k in self.k_max)
        self.validate()

    @property
    def use_unet_skips(self) -> bool:
        return self.variant == "hnoseg-xs"

    @property
    def shared_weights(self) -> bool:
        return self.variant != "fno"

    @property
    def block_skips(self) -> bool:
        return self.variant != "fno"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("d", "n_blocks", "in_channels", "num_labels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_xs < 1:
            raise ValueError(f"n_xs must be >= 1, got {self.n_xs}")
        if self.variant != "hnoseg-xs" and self.n_xs != 1:
            raise ValueError(f"n_xs={self.n_xs} is only meaningful for hnoseg-xs")
        if len(self.k_max) != 3 or min(self.k_max) < 1:
            raise ValueError(f"k_max must be three positive ints, got {self.k_max}")
        if self.spectral_budget is not None and self.variant == "hnoseg-xs":
            if self.n_xs * self.n_blocks != self.spectral_budget:
                raise ValueError(
                    f"n_xs * n_blocks = {self.n_xs * self.n_blocks} does not match the "
                    f"spectral budget {self.spectral_budget}")

    def check_resolution(self, spatial: Sequence[int]) -> None:
        """Input grids must be even and leave room for the band after downsampling."""
        spatial = tuple(int(s) for s in spatial)
        if len(spatial) != 3:
            raise ValueError(f"expected three spatial dims, got {spatial}")
        if any(s % 2 for s in spatial):
            raise ValueError(f"input spatial dims must be even, got {spatial}")
        for axis, (s, k) in enumerate(zip(spatial, self.k_max)):
            if 2 * k > s // 2:
                raise ValueError(
                    f"k_max[{axis}]={k} needs {2 * k} modes but the downsampled grid has "
                    f"{s // 2} points (input {s})")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["k_max"] = list(self.k_max)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -------------------------------------------------------------------- blocks

def fno_block(u: Tensor, W: Tensor, bias: Optional[Tensor], R: sp.SpectralWeights,
              k_max: Sequence[int]) -> Tensor:
    """``selu(W u + b + F^-1(pad(R . crop(F u))))``"""
    if u.shape[0] != W.shape[1]:
        raise ValueError(f"fno_block: input has {u.shape[0]} channels, W is {W.shape}")
    spec = sp.mode_crop(sp.dft_forward(u), k_max)
    if R.mode == "shared":
        mixed = sp.fourier_conv_shared(spec, R)
    else:
        mixed = sp.fourier_conv_per_mode(spec, R)
    kernel = sp.dft_inverse(sp.mode_pad(mixed))
    return selu(add(channel_linear(u, W, bias), kernel))


def hno_block(u: Tensor, W: Tensor, bias: Optional[Tensor], R: sp.SpectralWeights,
              k_max: Sequence[int], nonlinear: bool = True) -> Tensor:
    """``selu(W u + b + H^-1(pad(selu(R . crop(H u)))))``; inner selu optional."""
    if u.shape[0] != W.shape[1]:
        raise ValueError(f"hno_block: input has {u.shape[0]} channels, W is {W.shape}")
    spec = sp.mode_crop(sp.dht_forward(u), k_max)
    if nonlinear:
        mixed = sp.hartley_conv_shared_nonlinear(spec, R)
    else:
        mixed = sp.hartley_conv_shared(spec, R)
    kernel = sp.dht_inverse(sp.mode_pad(mixed))
    return selu(add(channel_linear(u, W, bias), kernel))


def hno_xs_block(u: Tensor, Rs: Sequence[Tensor], k_max: Sequence[int]) -> Tensor:
    """One Hartley transform pair around ``len(Rs)`` residual nonlinear convolutions.

    Each step maps the cropped spectrum ``S`` to ``selu(S + R_j S)``, i.e. the
    weight ``R_j`` acts as ``(I + R_j)``.
    """
    if len(Rs) < 1:
        raise ValueError("hno_xs_block needs at least one spectral convolution")
    spec = sp.mode_crop(sp.dht_forward(u), k_max)
    coeffs = spec.coeffs
    for R in Rs:
        if R.shape != (coeffs.shape[0], coeffs.shape[0]):
            raise ValueError(f"hno_xs_block: weight {R.shape} for {coeffs.shape[0]} channels")
        coeffs = selu(add(coeffs, channel_linear(coeffs, R)))
    out = sp.dht_inverse(sp.mode_pad(sp.SpectrumReal(coeffs, spec.grid_size)))
    return selu(out)


# ---------------------------------------------------------- parameter layout

def _band_size(k_max) -> int:
    return int(np.prod([2 * k for k in k_max]))


def parameter_shapes(config: ModelConfig) -> dict:
    """Ordered mapping of parameter name to shape for a configuration."""
    d, L, cin = config.d, config.num_labels, config.in_channels
    band = tuple(2 * k for k in config.k_max)
    shapes = {"input.weight": (d, cin, 2, 2, 2), "input.bias": (d,)}
    for i in range(1, config.n_blocks + 1):
        p = f"block{i}."
        if config.variant == "hnoseg-xs":
            for j in range(1, config.n_xs + 1):
                shapes[p + f"R{j}"] = (d, d)
        else:
            shapes[p + "W"] = (d, d)
            shapes[p + "W_bias"] = (d,)
            if config.variant == "hnoseg":
                shapes[p + "R"] = (d, d)
            elif config.variant == "fnoseg":
                shapes[p + "R_real"] = (d, d)
                shapes[p + "R_imag"] = (d, d)
            else:
                shapes[p + "R_real"] = (d, d) + band
                shapes[p + "R_imag"] = (d, d) + band
        if config.block_skips:
            shapes[p + "skip.weight"] = (d, 2 * d)
            shapes[p + "skip.bias"] = (d,)
    if config.use_unet_skips:
        for j in _unet_receivers(config.n_blocks):
            shapes[f"unet{j}.weight"] = (d, 2 * d)
            shapes[f"unet{j}.bias"] = (d,)
    shapes["output.weight"] = (L, d)
    shapes["output.bias"] = (L,)
    return shapes


def _unet_receivers(n_blocks: int) -> list:
    # block i (encoder half) feeds block n_B - i + 1
    return [n_blocks - i + 1 for i in range(n_blocks // 2, 0, -1)]


def _fan_in(name: str, shape: tuple) -> int:
    if name == "input.weight":
        return int(np.prod(shape[1:]))
    return shape[1]


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count.

    input conv ``8 C d + d``; spectral ``n_XS n_B d^2`` (Hartley, shared),
    ``2 n_B d^2`` (Fourier, shared) or ``2 n_B d^2 |band|`` (Fourier, per
    mode); ``W_t`` ``n_B (d^2 + d)`` outside HNO-XS; block skips
    ``n_B (2 d^2 + d)`` except FNO; U-Net merges ``floor(n_B / 2) (2 d^2 + d)``
    for HNO-XS; output ``d L + L``.
    """
    d, nb, L, cin = config.d, config.n_blocks, config.num_labels, config.in_channels
    merge = 2 * d * d + d
    total = 8 * cin * d + d + d * L + L
    if config.variant == "hnoseg-xs":
        total += config.n_xs * nb * d * d
        total += (nb // 2) * merge
    else:
        total += nb * (d * d + d)
        if config.variant == "hnoseg":
            total += nb * d * d
        elif config.variant == "fnoseg":
            total += 2 * nb * d * d
        else:
            total += 2 * nb * d * d * _band_size(config.k_max)
    if config.block_skips:
        total += nb * merge
    return total


# ------------------------------------------------------------------- network

@dataclass
class Model:
    config: ModelConfig
    params: dict = field(default_factory=dict)
    dtype: type = np.float64

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def parameters(self) -> list:
        return list(self.params.values())

    def set_params(self, arrays: dict) -> None:
        if set(arrays) != set(self.params):
            raise KeyError("parameter name set mismatch")
        for name, arr in arrays.items():
            self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True)

    def _spectral(self, i: int) -> sp.SpectralWeights:
        p, P = f"block{i}.", self.params
        if self.config.variant == "hnoseg":
            return sp.SpectralWeights("shared", P[p + "R"])
        mode = "shared" if self.config.shared_weights else "per-mode"
        return sp.SpectralWeights(mode, P[p + "R_real"], P[p + "R_imag"])

    def block(self, i: int, u: Tensor) -> Tensor:
        cfg, P, p = self.config, self.params, f"block{i}."
        if cfg.variant == "hnoseg-xs":
            return hno_xs_block(u, [P[p + f"R{j}"] for j in range(1, cfg.n_xs + 1)], cfg.k_max)
        if cfg.variant == "hnoseg":
            return hno_block(u, P[p + "W"], P[p + "W_bias"], self._spectral(i), cfg.k_max,
                             nonlinear=cfg.spectral_nonlinearity)
        return fno_block(u, P[p + "W"], P[p + "W_bias"], self._spectral(i), cfg.k_max)

    def features(self, x: Tensor) -> Tensor:
        """Downsampled feature map after the last block (before upsampling)."""
        cfg, P = self.config, self.params
        u = conv3d_k2s2(x, P["input.weight"], P["input.bias"])
        receivers = set(_unet_receivers(cfg.n_blocks)) if cfg.use_unet_skips else set()
        saved = {}
        for i in range(1, cfg.n_blocks + 1):
            if i in receivers:
                partner = saved[cfg.n_blocks - i + 1]
                u = channel_linear(concat_channels(u, partner),
                                   P[f"unet{i}.weight"], P[f"unet{i}.bias"])
            v = self.block(i, u)
            if cfg.block_skips:
                u = channel_linear(concat_channels(u, v),
                                   P[f"block{i}.skip.weight"], P[f"block{i}.skip.bias"])
            else:
                u = v
            if cfg.use_unet_skips and i <= cfg.n_blocks // 2:
                saved[i] = u
        return u

    def logits(self, x: Tensor) -> Tensor:
        self.config.check_resolution(x.shape[1:])
        if x.shape[0] != self.config.in_channels:
            raise ValueError(f"model expects {self.config.in_channels} input channels, got {x.shape[0]}")
        if x.dtype != self.dtype:
            x = Tensor(x.data, dtype=self.dtype)
        u = self.features(x)
        up = trilinear_resample(u, x.shape[1:])
        return channel_linear(up, self.params["output.weight"], self.params["output.bias"])

    def forward(self, x: Tensor) -> Tensor:
        """Per-label scores in (0, 1), same spatial shape as ``x``."""
        return sigmoid(self.logits(x))

    __call__ = forward


def build_network(config: ModelConfig, seed: int = 0, resolution: Optional[Sequence[int]] = None,
                  dtype=np.float64) -> Model:
    """Initialize a model: weights ~ N(0, 1/fan_in), biases zero."""
    config.validate()
    if resolution is not None:
        config.check_resolution(resolution)
    rng = substream(seed, "init")
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("bias"):
            arr = np.zeros(shape)
        else:
            std = 1.0 / np.sqrt(_fan_in(name, shape))
            if name.endswith(("R_real", "R_imag")):
                std /= np.sqrt(2.0)  # complex weight: total variance 1/fan_in
            arr = rng.normal(0.0, std, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    model = Model(config, params, dtype)
    expected = param_count(config)
    if model.n_params != expected:
        raise AssertionError(f"registered {model.n_params} parameters, closed form gives {expected}")
    return model
