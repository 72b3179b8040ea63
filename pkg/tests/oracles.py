"""Slow, direct-summation reference implementations used only by tests."""

import itertools

import numpy as np


def _grid_points(shape):
    return np.array(list(itertools.product(*[range(n) for n in shape])), dtype=float)


def phase_matrix(shape):
    """2*pi * sum_i k_i n_i / N_i for every (k, n) pair, row-major order."""
    pts = _grid_points(shape)
    scaled = pts / np.array(shape, dtype=float)
    return 2 * np.pi * (scaled @ pts.T)


def cas_transform(x, forward=True):
    """Direct O(N^2) cas summation over all axes after the first."""
    c, *shape = x.shape
    theta = phase_matrix(shape)
    cas = np.cos(theta) + np.sin(theta)
    out = x.reshape(c, -1) @ cas.T
    if forward:
        out = out / np.prod(shape)
    return out.reshape(x.shape)


def dft_direct(x, forward=True):
    c, *shape = x.shape
    theta = phase_matrix(shape)
    sign = -1 if forward else 1
    out = x.reshape(c, -1).astype(complex) @ np.exp(sign * 1j * theta).T
    if forward:
        out = out / np.prod(shape)
    return out.reshape(x.shape)


def circular_conv(kernel, u):
    """out[o, n] = sum_c sum_m kernel[o, c, (n - m) mod N] u[c, m]."""
    cout, cin, *shape = kernel.shape
    pts = _grid_points(shape).astype(int)
    n_tot = len(pts)
    diff = (pts[:, None, :] - pts[None, :, :]) % np.array(shape)
    flat = np.ravel_multi_index(tuple(diff.reshape(-1, len(shape)).T), shape).reshape(n_tot, n_tot)
    k2 = kernel.reshape(cout, cin, -1)
    u2 = u.reshape(cin, -1)
    out = np.zeros((cout, n_tot), dtype=np.result_type(kernel, u))
    for o in range(cout):
        for c in range(cin):
            out[o] += k2[o, c][flat] @ u2[c]
    return out.reshape((cout,) + tuple(shape))


def kernel_from_hartley(R):
    """Spatial kernel whose normalized Hartley spectrum times N is R."""
    cout, cin, *shape = R.shape
    k = cas_transform(R.reshape(cout * cin, *shape), forward=False) / np.prod(shape)
    return k.reshape(R.shape)


def kernel_from_fourier(R):
    """Real part of the spatial kernel whose normalized DFT times N is R."""
    cout, cin, *shape = R.shape
    k = dft_direct(R.reshape(cout * cin, *shape), forward=False) / np.prod(shape)
    return k.real.reshape(R.shape)


def half_space_sign(shape):
    """Brute-force +1/-1/0 labelling with s(-k) = -s(k) over a full grid."""
    sign = np.zeros(shape, dtype=int)
    for k in itertools.product(*[range(n) for n in shape]):
        neg = tuple((-ki) % n for ki, n in zip(k, shape))
        if neg == k:
            continue
        for ki, nki, n in zip(k, neg, shape):
            if ki != nki:
                signed = ki if ki < n / 2 else ki - n
                sign[k] = 1 if signed > 0 else -1
                break
    return sign
