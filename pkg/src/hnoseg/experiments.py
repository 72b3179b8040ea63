"""Reusable experiment drivers: mode-truncation demo, hyperparameter sweeps, timing."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import spectral as sp
from .models import ModelConfig, build_network, param_count
from .synthdata import Dataset, make_scenes, rasterize
from .tensor import Tensor
from .trainer import TrainConfig, evaluate, train

DEFAULT_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)


# ------------------------------------------------------------ mode truncation

def kept_modes(n: int, fraction: float) -> int:
    """``k`` such that ``2k`` of ``n`` indices (``fraction`` of the axis) are kept."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"mode fraction must lie in [0, 1], got {fraction}")
    return int(round(fraction * n / 2))


def _band_mask(shape: Sequence[int], k: Sequence[int]) -> np.ndarray:
    mask = np.ones((), bool)
    for n, kk in zip(shape, k):
        idx = np.arange(n)
        axis = (idx < kk) | (idx >= n - kk)
        mask = mask[..., None] & axis
    return mask


def truncation_mse(volume: np.ndarray, fraction: float) -> float:
    """MSE of reconstructing ``volume`` from the retained Hartley band.

    With the forward transform scaled by ``1/N`` the spatial MSE equals the
    summed energy of the discarded coefficients, so a full band gives exactly 0.
    """
    volume = np.asarray(volume, dtype=np.float64)
    coeffs = sp.dht_forward(Tensor(volume[None])).coeffs.numpy()[0]
    k = [kept_modes(n, fraction) for n in volume.shape]
    dropped = ~_band_mask(volume.shape, k)
    return float(np.sum(coeffs[dropped] ** 2))


def truncated_reconstruction(volume: np.ndarray, fraction: float) -> np.ndarray:
    volume = np.asarray(volume, dtype=np.float64)
    k = [kept_modes(n, fraction) for n in volume.shape]
    coeffs = sp.dht_forward(Tensor(volume[None])).coeffs.numpy()[0]
    kept = np.where(_band_mask(volume.shape, k), coeffs, 0.0)
    return sp.dht_inverse(sp.SpectrumReal(Tensor(kept[None]), volume.shape)).numpy()[0]


def demo_volume(seed: int = 0, resolution: Sequence[int] = (64, 64, 64), channel: int = 0) -> np.ndarray:
    """One channel of a synthetic scene rescaled to [0, 255]."""
    scene = make_scenes(seed, 1)[0]
    img = rasterize(scene, resolution).image[channel]
    lo, hi = img.min(), img.max()
    return (img - lo) / max(hi - lo, 1e-12) * 255.0


def spectral_demo(volume: np.ndarray, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> list:
    """Rows ``(fraction, k_max, mse)`` sorted by fraction."""
    rows = []
    for f in sorted(fractions):
        k = tuple(kept_modes(n, f) for n in volume.shape)
        rows.append((float(f), k, truncation_mse(volume, f)))
    return rows


# ---------------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    label: str
    config: ModelConfig
    n_params: int
    dice: dict            # resolution -> mean Dice
    per_label: dict       # resolution -> per-label Dice
    seconds: float


def full_band_k(resolution: Sequence[int]) -> tuple:
    """Largest ``k_max`` for an input grid: the whole downsampled spectrum."""
    return tuple(int(s) // 4 for s in resolution)


def run_setting(label: str, config: ModelConfig, train_config: TrainConfig, dataset: Dataset,
                eval_resolutions: Sequence[int], dtype=np.float64) -> SweepRow:
    t0 = time.perf_counter()
    ckpt, _ = train(config, train_config, dataset, dtype=dtype)
    model = ckpt.to_model()
    dice, per_label = {}, {}
    for r in eval_resolutions:
        res = evaluate(model, dataset, r)
        dice[int(r)] = res.mean
        per_label[int(r)] = res.per_label
    return SweepRow(label, config, param_count(config), dice, per_label, time.perf_counter() - t0)


def sweep_nxs(values: Sequence[int], budget: int, base: ModelConfig, train_config: TrainConfig,
              dataset: Dataset, eval_resolutions: Sequence[int] = (32, 64),
              progress: Optional[Callable[[SweepRow], None]] = None) -> list:
    """Vary ``n_xs`` at a fixed total count ``n_xs * n_blocks = budget``."""
    rows = []
    for n_xs in values:
        if budget % n_xs:
            raise ValueError(f"n_xs={n_xs} does not divide the spectral budget {budget}")
        cfg = dataclasses.replace(base, variant="hnoseg-xs", n_xs=int(n_xs),
                                  n_blocks=budget // int(n_xs), spectral_budget=budget)
        rows.append(run_setting(f"n_xs={n_xs}", cfg, train_config, dataset, eval_resolutions))
        if progress:
            progress(rows[-1])
    return rows


def sweep_kmax(k_values: Sequence, base: ModelConfig, train_config: TrainConfig, dataset: Dataset,
               eval_resolutions: Sequence[int] = (32, 64),
               progress: Optional[Callable[[SweepRow], None]] = None) -> list:
    """Train ``base`` once per ``k_max``; the string ``"all"`` means the full band."""
    rows = []
    for k in k_values:
        if isinstance(k, str):
            if k != "all":
                raise ValueError(f"unknown k_max setting {k!r}")
            k = full_band_k(dataset.resolution)
        elif np.isscalar(k):
            k = (int(k),) * 3
        cfg = dataclasses.replace(base, k_max=tuple(int(v) for v in k))
        rows.append(run_setting(f"k_max={cfg.k_max}", cfg, train_config, dataset, eval_resolutions))
        if progress:
            progress(rows[-1])
    return rows


# ----------------------------------------------------------------------- bench

def _time(fn: Callable[[], object], repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench(sizes: Sequence[int] = (32, 64), channels: int = 16, repeats: int = 3,
          config: Optional[ModelConfig] = None, seed: int = 0) -> list:
    """Median seconds for transforms and whole-network forward passes: rows ``(op, size, s)``."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        x = Tensor(rng.standard_normal((channels, n, n, n)))
        rows.append(("dht_forward", n, _time(lambda: sp.dht_forward(x), repeats)))
        rows.append(("dft_forward", n, _time(lambda: sp.dft_forward(x), repeats)))
    base = config or ModelConfig()
    for variant in ("fnoseg", "hnoseg", "hnoseg-xs"):
        n_xs = base.n_xs if variant == "hnoseg-xs" else 1
        cfg = dataclasses.replace(base, variant=variant, n_xs=n_xs, spectral_budget=None)
        model = build_network(cfg, seed=seed)
        for n in sizes:
            x = Tensor(rng.standard_normal((cfg.in_channels, n, n, n)))
            rows.append((f"forward:{variant}", n, _time(lambda: model.forward(x), repeats)))
    return rows
