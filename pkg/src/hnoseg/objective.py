"""PCC training loss and evaluation metrics (Dice, MSE)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, record

PCC_EPS = 1e-7


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check_pair(scores: np.ndarray, truth: np.ndarray) -> None:
    if scores.shape != truth.shape:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} differ in shape")
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError(
            f"scores must lie in [0, 1], got range [{scores.min():.4g}, {scores.max():.4g}]")
    if not np.all((truth == 0) | (truth == 1)):
        raise ValueError("truth must be binary")


def pcc_loss(scores: Tensor, truth, eps: float = PCC_EPS) -> Tensor:
    """Mean over labels of ``1 - PCC_l``, with PCC rescaled to [0, 1].

    ``PCC_l = 0.5 * (cov(p_l, y_l) / sqrt(var(p_l) var(y_l) + eps) + 1)`` using
    sums (not means) of centred products over the voxels of label ``l``.
    A label absent from ``truth`` contributes exactly 0.5.
    """
    p = scores.data
    y = _as_array(truth).astype(p.dtype, copy=False)
    _check_pair(p, y)
    L = p.shape[0]
    p2 = p.reshape(L, -1)
    y2 = y.reshape(L, -1)
    pc = p2 - p2.mean(axis=1, keepdims=True)
    yc = y2 - y2.mean(axis=1, keepdims=True)
    num = np.sum(pc * yc, axis=1)
    var_p = np.sum(pc * pc, axis=1)
    var_y = np.sum(yc * yc, axis=1)
    den = np.sqrt(var_p * var_y + eps)
    pcc = 0.5 * (num / den + 1.0)
    loss = np.mean(1.0 - pcc)

    def vjp(g):
        # d num / dp = yc and d var_p / dp = 2 pc (the centring terms cancel)
        dpcc = 0.5 * (yc / den[:, None] - (num * var_y / den**3)[:, None] * pc)
        return ((-g / L) * dpcc).reshape(p.shape),

    return record(np.asarray(loss, dtype=p.dtype), (scores,), vjp)


def dice(scores, truth, threshold: float = 0.5) -> np.ndarray:
    """Per-label Dice of ``scores > threshold`` against ``truth``.

    Both sets empty counts as a perfect match (1.0).
    """
    p = _as_array(scores)
    y = _as_array(truth)
    if p.shape != y.shape:
        raise ValueError(f"scores {p.shape} and truth {y.shape} differ in shape")
    L = p.shape[0]
    pred = (p > threshold).reshape(L, -1)
    true = (y > 0.5).reshape(L, -1)
    inter = np.sum(pred & true, axis=1)
    total = pred.sum(axis=1) + true.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total == 0, 1.0, 2.0 * inter / np.maximum(total, 1))
    return out.astype(np.float64)


def mse(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
