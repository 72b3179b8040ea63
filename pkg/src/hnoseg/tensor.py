"""Dense real tensors and a tape-based reverse-mode differentiation engine.

Every operation records a node on the active :class:`Tape` (if any input
requires a gradient); :func:`backward` walks the tape once in reverse order.
Volumetric fields use the layout ``[C, X, Y, Z]``; the spatial helpers accept
any number of trailing spatial axes so that 1-D and 2-D checks reuse them.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

Scalar = Union[int, float]


class Tensor:
    """Immutable dense real array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        # takes ownership of arr without copying
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Node(NamedTuple):
    out: Tensor
    inputs: tuple
    vjp: Callable


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the block are
    recorded in topological order (inputs always precede outputs).
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def record(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``out`` and register it on the active tape.

    ``vjp(g)`` must return one gradient (or None) per input.
    """
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=track)
    if track:
        tape.nodes.append(Node(result, tuple(inputs), vjp))
    return result


def backward(tape: Tape, loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> dict:
    """Reverse sweep over ``tape`` seeded at the scalar ``loss``.

    Returns a mapping from leaf tensor to its gradient array.  With ``wrt``
    given, exactly those tensors are returned (zero if untouched); otherwise
    every ``requires_grad`` leaf seen on the tape.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.out) for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for n in tape.nodes:
        for t in n.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    targets = list(wrt) if wrt is not None else list(leaves.values())
    out = {}
    for t in targets:
        g = grads.get(id(t))
        out[t] = np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)
    return out


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data + c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data - c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def reduce_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return record(np.asarray(a.data.sum()), (a,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


# --------------------------------------------------------------- activations

def selu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0
    neg = np.minimum(xd, 0.0)
    out = SELU_LAMBDA * np.where(pos, xd, SELU_ALPHA * np.expm1(neg))
    deriv = SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * np.exp(neg))
    return record(out.astype(xd.dtype, copy=False), (x,), lambda g: (g * deriv,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),))


# ------------------------------------------------------------ channel mixing

def channel_linear(x: Tensor, W: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-voxel matrix product: ``out[:, v] = W @ x[:, v] (+ bias)``."""
    if W.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ValueError(
            f"channel_linear: weight {W.shape} does not match input channels {x.shape[0]}")
    cout = W.shape[0]
    spatial = x.shape[1:]
    x2 = x.data.reshape(x.shape[0], -1)
    out = W.data @ x2
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"channel_linear: bias {bias.shape} vs {cout} outputs")
        out = out + bias.data[:, None]
    Wd = W.data

    def vjp(g):
        g2 = g.reshape(cout, -1)
        gx = (Wd.T @ g2).reshape(x.shape) if x.requires_grad else None
        gW = g2 @ x2.T if W.requires_grad else None
        if bias is None:
            return gx, gW
        return gx, gW, g2.sum(axis=1)

    inputs = (x, W) if bias is None else (x, W, bias)
    return record(out.reshape((cout,) + spatial), inputs, vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[0]
    return record(np.concatenate([a.data, b.data], axis=0), (a, b),
                  lambda g: (g[:ca], g[ca:]))


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return record(x.data[start:stop].copy(), (x,), vjp)


def split_channels(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    return channel_slice(x, 0, first), channel_slice(x, first, x.shape[0])


def take(x: Tensor, index: int) -> Tensor:
    """Select one slice along the leading axis."""
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return record(x.data[index].copy(), (x,), vjp)


# ---------------------------------------------------------------- resampling

def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights, half-pixel centres, clamped edges."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    M = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(M, (rows, lo), 1.0 - frac)
    np.add.at(M, (rows, hi), frac)
    return M


def _apply_along(arr: np.ndarray, M: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    return np.moveaxis(moved @ M.T, -1, axis)


def trilinear_resample(x: Tensor, target: Sequence[int]) -> Tensor:
    """Resample the spatial axes of ``x`` to ``target`` (align-corners false)."""
    target = tuple(int(t) for t in target)
    if len(target) != x.ndim - 1:
        raise ValueError(f"trilinear_resample: target {target} for input {x.shape}")
    if any(t < 1 for t in target):
        raise ValueError(f"trilinear_resample: target dims must be >= 1, got {target}")
    mats = []
    out = x.data
    for axis, (n_in, n_out) in enumerate(zip(x.shape[1:], target), start=1):
        if n_in == n_out:
            continue
        M = interp_matrix(n_in, n_out, dtype=x.dtype)
        mats.append((axis, M))
        out = _apply_along(out, M, axis)
    if not mats:
        out = out.copy()

    def vjp(g):
        for axis, M in reversed(mats):
            g = _apply_along(g, M.T, axis)
        return (g,)

    return record(np.ascontiguousarray(out), (x,), vjp)


def conv3d_k2s2(x: Tensor, W: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Non-overlapping 2x2x2 convolution with stride two."""
    cin, X, Y, Z = x.shape
    if X % 2 or Y % 2 or Z % 2:
        raise ValueError(f"conv3d_k2s2: spatial dims must be even, got {x.shape[1:]}")
    if W.shape[1:] != (cin, 2, 2, 2):
        raise ValueError(f"conv3d_k2s2: kernel {W.shape} does not fit input {x.shape}")
    cout = W.shape[0]
    half = (X // 2, Y // 2, Z // 2)
    # [Cin, X/2, 2, Y/2, 2, Z/2, 2] -> [Cin, 2, 2, 2, X/2, Y/2, Z/2]
    patches = x.data.reshape(cin, half[0], 2, half[1], 2, half[2], 2)
    patches = patches.transpose(0, 2, 4, 6, 1, 3, 5).reshape(cin * 8, -1)
    W2 = W.data.reshape(cout, cin * 8)
    out = W2 @ patches
    if bias is not None:
        out = out + bias.data[:, None]

    def vjp(g):
        g2 = g.reshape(cout, -1)
        gx = None
        if x.requires_grad:
            gp = (W2.T @ g2).reshape(cin, 2, 2, 2, *half)
            gx = gp.transpose(0, 4, 1, 5, 2, 6, 3).reshape(x.shape)
        gW = (g2 @ patches.T).reshape(W.shape) if W.requires_grad else None
        if bias is None:
            return gx, gW
        return gx, gW, g2.sum(axis=1)

    inputs = (x, W) if bias is None else (x, W, bias)
    return record(out.reshape((cout,) + half), inputs, vjp)
