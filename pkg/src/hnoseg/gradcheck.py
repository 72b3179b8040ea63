"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, mul, reduce_sum


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    n_coords: int

    def passed(self, tol: float = 1e-5) -> bool:
        return self.rel_error < tol


def _scalarize(out: Tensor, probe: np.ndarray) -> Tensor:
    return reduce_sum(mul(out, Tensor._wrap(probe)))


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    max_coords: Optional[int] = 64,
    name: str = "",
) -> list[GradCheckResult]:
    """Compare tape gradients of ``sum(fn(*inputs) * probe)`` with central differences.

    ``probe`` is a fixed random array so every output element matters.  The
    step for coordinate ``theta`` is ``1e-6 * (1 + |theta|)``.  At most
    ``max_coords`` randomly chosen coordinates per input are perturbed; the
    error is ``||g_tape - g_fd|| / max(||g_tape||, ||g_fd||)`` over them.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    probe = rng.standard_normal(fn(*leaves).shape)
    with Tape() as tape:
        out = fn(*leaves)
        loss = _scalarize(out, probe)
    grads = backward(tape, loss, wrt=leaves)

    def value(args):
        o = fn(*[Tensor._wrap(a) for a in args])
        return float(np.sum(o.data * probe))

    results = []
    for i, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        fd = np.empty(len(coords))
        for j, c in enumerate(coords):
            h = 1e-6 * (1.0 + abs(flat[c]))
            args_p = [a.copy() for a in arrays]
            args_m = [a.copy() for a in arrays]
            args_p[i].reshape(-1)[c] += h
            args_m[i].reshape(-1)[c] -= h
            fd[j] = (value(args_p) - value(args_m)) / (2 * h)
        tape_g = grads[leaves[i]].reshape(-1)[coords]
        denom = max(np.linalg.norm(tape_g), np.linalg.norm(fd), 1e-300)
        err = float(np.linalg.norm(tape_g - fd) / denom)
        results.append(GradCheckResult(f"{name}[{i}]", err, len(coords)))
    return results


# ------------------------------------------------------------ randomized suite

def _cases(rng: np.random.Generator) -> dict:
    """One random instance of every primitive and block: name -> (fn, shapes)."""
    # deferred so the tensor module never depends on spectral/models at import time
    from . import spectral as sp
    from .models import fno_block, hno_block, hno_xs_block
    from .objective import pcc_loss
    from .tensor import (
        add, channel_linear, concat_channels, conv3d_k2s2, scale, selu, sigmoid,
        split_channels, sub, take, trilinear_resample,
    )

    S = tuple(int(v) for v in rng.choice([2, 4, 6], size=3))
    k = tuple(int(rng.integers(1, s // 2 + 1)) for s in S)
    ci, co = (int(v) for v in rng.integers(1, 4, size=2))
    c2 = int(rng.integers(1, 3))
    up = tuple(int(v) for v in rng.integers(2, 7, size=3))
    band = tuple(2 * kk for kk in k)
    shared = lambda *W: sp.SpectralWeights("shared", *W)
    per_mode = lambda *W: sp.SpectralWeights("per-mode", *W)
    X = (ci,) + S
    c = float(rng.normal())
    truth = (rng.random(X) < 0.5).astype(float)
    return {
        "add": (add, [X, X]),
        "sub": (sub, [X, X]),
        "mul": (lambda a, b: a * b, [X, X]),
        "scale": (lambda a: scale(a, c), [X]),
        "selu": (selu, [X]),
        "sigmoid": (sigmoid, [X]),
        "channel_linear": (channel_linear, [X, (co, ci), (co,)]),
        "concat": (concat_channels, [X, (c2,) + S]),
        "split": (lambda x: split_channels(x, 1)[1], [(ci + 1,) + S]),
        "take": (lambda x: take(x, 1), [(2,) + X]),
        "trilinear": (lambda x: trilinear_resample(x, up), [X]),
        "conv3d_k2s2": (conv3d_k2s2, [X, (co, ci, 2, 2, 2), (co,)]),
        "pcc_loss": (lambda p: pcc_loss(sigmoid(p), truth), [X]),
        "dht_forward": (lambda x: sp.dht_forward(x).coeffs, [X]),
        "dht_inverse": (lambda c: sp.dht_inverse(sp.SpectrumReal(c, S)), [X]),
        "dft_forward": (lambda x: (lambda F: add(F.real, scale(F.imag, 0.7)))(sp.dft_forward(x)), [X]),
        "dft_inverse": (lambda a, b: sp.dft_inverse(sp.SpectrumComplex(a, b, S)), [X, X]),
        "mode_crop_pad": (lambda x: sp.mode_pad(sp.mode_crop(sp.dht_forward(x), k)).coeffs, [X]),
        "hartley_conv_full": (lambda u, R: sp.hartley_conv_full(
            sp.mode_crop(sp.dht_forward(u), k), per_mode(R)).coeffs, [X, (co, ci) + band]),
        "hartley_conv_shared": (lambda u, R: sp.hartley_conv_shared(
            sp.mode_crop(sp.dht_forward(u), k), shared(R)).coeffs, [X, (co, ci)]),
        "hartley_conv_shared_nonlinear": (lambda u, R: sp.hartley_conv_shared_nonlinear(
            sp.mode_crop(sp.dht_forward(u), k), shared(R)).coeffs, [X, (co, ci)]),
        "fourier_conv_shared": (lambda u, a, b: sp.dft_inverse(sp.mode_pad(sp.fourier_conv_shared(
            sp.mode_crop(sp.dft_forward(u), k), shared(a, b)))), [X, (co, ci), (co, ci)]),
        "fourier_conv_per_mode": (lambda u, a, b: sp.dft_inverse(sp.mode_pad(sp.fourier_conv_per_mode(
            sp.mode_crop(sp.dft_forward(u), k), per_mode(a, b)))), [X, (co, ci) + band, (co, ci) + band]),
        "fno_block": (lambda u, W, b, Ra, Rb: fno_block(u, W, b, per_mode(Ra, Rb), k),
                      [X, (ci, ci), (ci,), (ci, ci) + band, (ci, ci) + band]),
        "fnoseg_block": (lambda u, W, b, Ra, Rb: fno_block(u, W, b, shared(Ra, Rb), k),
                         [X, (ci, ci), (ci,), (ci, ci), (ci, ci)]),
        "hno_block": (lambda u, W, b, R: hno_block(u, W, b, shared(R), k), [X, (ci, ci), (ci,), (ci, ci)]),
        "hno_block_linear": (lambda u, W, b, R: hno_block(u, W, b, shared(R), k, nonlinear=False),
                             [X, (ci, ci), (ci,), (ci, ci)]),
        "hno_xs_block": (lambda u, *Rs: hno_xs_block(u, list(Rs), k), [X] + [(ci, ci)] * 3),
    }


CASE_NAMES = tuple(_cases(np.random.default_rng(0)))


def gradient_suite(seed: int = 0, n_configs: int = 20, max_coords: int = 48,
                   only: Optional[Sequence[str]] = None) -> list[GradCheckResult]:
    """Finite-difference check of every primitive and block on random configurations."""
    rng = np.random.default_rng(seed)
    results = []
    for i in range(n_configs):
        for name, (fn, shapes) in _cases(rng).items():
            if only is not None and name not in only:
                continue
            inputs = [0.7 * rng.standard_normal(s) for s in shapes]
            results += check_gradients(fn, inputs, rng, max_coords=max_coords, name=f"{name}#{i}")
    return results
