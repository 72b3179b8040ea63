import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hnoseg.gradcheck import check_gradients
from hnoseg.tensor import (
    SELU_ALPHA, SELU_LAMBDA, Tape, Tensor, add, backward, channel_linear, concat_channels,
    conv3d_k2s2, mul, reduce_sum, scale, selu, sigmoid, split_channels, sub,
    trilinear_resample,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_elementwise_examples():
    np.testing.assert_array_equal(add(Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])
    x = Tensor([1.5, -2.0, 3.0])
    assert not np.any(mul(x, Tensor(np.zeros(3))).data)
    np.testing.assert_array_equal(scale(Tensor([2, 4]), 0.5).data, [1, 2])
    np.testing.assert_array_equal(sub(Tensor([2, 4]), 1).data, [1, 3])


def test_elementwise_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2,\) vs \(3,\)"):
        add(Tensor([1, 2]), Tensor([1, 2, 3]))


def test_tensors_are_read_only():
    t = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


def test_channel_linear_examples(rng):
    x = Tensor(rng.standard_normal((3, 2, 2, 2)))
    np.testing.assert_array_equal(channel_linear(x, Tensor(np.eye(3))).data, x.data)

    x2 = Tensor(rng.standard_normal((2, 2, 2, 2)))
    out = channel_linear(x2, Tensor([[1.0, 1.0]]))
    np.testing.assert_allclose(out.data[0], x2.data[0] + x2.data[1], rtol=0, atol=1e-15)

    W = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    out = channel_linear(x, Tensor(W), Tensor(b)).data
    expected = np.zeros((4, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for o in range(4):
                    expected[o, i, j, k] = b[o] + sum(W[o, c] * x.data[c, i, j, k] for c in range(3))
    np.testing.assert_allclose(out, expected, rtol=1e-13, atol=1e-13)


def test_channel_linear_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        channel_linear(Tensor(np.zeros((3, 2, 2, 2))), Tensor(np.zeros((2, 2))))


def test_selu_examples():
    assert selu(Tensor([0.0])).data[0] == 0.0
    assert selu(Tensor([1.0])).data[0] == pytest.approx(SELU_LAMBDA, abs=1e-15)
    assert SELU_LAMBDA == pytest.approx(1.0507, abs=1e-4)
    assert selu(Tensor([-50.0])).data[0] == pytest.approx(-SELU_LAMBDA * SELU_ALPHA, rel=1e-15)
    # closed form at a negative point
    assert selu(Tensor([-0.5])).data[0] == pytest.approx(
        SELU_LAMBDA * SELU_ALPHA * (np.exp(-0.5) - 1), rel=1e-14)


def test_concat_and_split(rng):
    a = Tensor(rng.standard_normal((1, 2, 2, 2)))
    b = Tensor(rng.standard_normal((2, 2, 2, 2)))
    empty = Tensor(np.zeros((0, 2, 2, 2)))
    np.testing.assert_array_equal(concat_channels(a, empty).data, a.data)
    c = concat_channels(a, b)
    assert c.shape == (3, 2, 2, 2)
    np.testing.assert_array_equal(c.data[:1], a.data)
    np.testing.assert_array_equal(c.data[1:], b.data)
    a2, b2 = split_channels(c, 1)
    np.testing.assert_array_equal(a2.data, a.data)
    np.testing.assert_array_equal(b2.data, b.data)
    with pytest.raises(ValueError):
        concat_channels(a, Tensor(np.zeros((1, 2, 2, 4))))


def ramp_oracle(n_in, n_out):
    # linear interpolation of f(i) = i under half-pixel mapping with edge clamp
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    return np.clip(src, 0, n_in - 1)


def test_trilinear_resample_examples(rng):
    x = Tensor(rng.standard_normal((2, 4, 6, 8)))
    same = trilinear_resample(x, (4, 6, 8))
    assert same.data.tobytes() == x.data.tobytes()

    const = Tensor(np.full((1, 4, 4, 4), 2.5))
    np.testing.assert_allclose(trilinear_resample(const, (7, 8, 3)).data, 2.5, rtol=1e-15)

    i, j, k = np.meshgrid(np.arange(4), np.arange(4), np.arange(4), indexing="ij")
    ramp = Tensor((1.0 * i + 2.0 * j - 3.0 * k)[None])
    up = trilinear_resample(ramp, (8, 8, 8)).data[0]
    oi, oj, ok = np.meshgrid(*(ramp_oracle(4, 8),) * 3, indexing="ij")
    np.testing.assert_allclose(up, oi + 2 * oj - 3 * ok, atol=1e-13)

    with pytest.raises(ValueError):
        trilinear_resample(x, (0, 6, 8))


def conv_oracle(x, W, b):
    cin, X, Y, Z = x.shape
    out = np.zeros((W.shape[0], X // 2, Y // 2, Z // 2))
    for o in range(W.shape[0]):
        for i in range(X // 2):
            for j in range(Y // 2):
                for k in range(Z // 2):
                    acc = b[o]
                    for c in range(cin):
                        for a in range(2):
                            for bb in range(2):
                                for cc in range(2):
                                    acc += W[o, c, a, bb, cc] * x[c, 2 * i + a, 2 * j + bb, 2 * k + cc]
                    out[o, i, j, k] = acc
    return out


def test_conv3d_k2s2_examples(rng):
    const = Tensor(np.full((1, 4, 4, 4), 3.0))
    avg = Tensor(np.full((1, 1, 2, 2, 2), 1 / 8))
    out = conv3d_k2s2(const, avg, Tensor([0.0]))
    np.testing.assert_allclose(out.data, 3.0, rtol=1e-15)

    delta = np.zeros((1, 8, 8, 8))
    delta[0, 4, 2, 6] = 1.0
    kern = np.zeros((1, 1, 2, 2, 2))
    kern[0, 0, 0, 0, 0] = 1.0
    out = conv3d_k2s2(Tensor(delta), Tensor(kern), Tensor([0.0])).data
    assert out.shape == (1, 4, 4, 4)
    assert np.argwhere(out[0]).tolist() == [[2, 1, 3]]

    x = rng.standard_normal((2, 4, 4, 4))
    W = rng.standard_normal((3, 2, 2, 2, 2))
    b = rng.standard_normal(3)
    out = conv3d_k2s2(Tensor(x), Tensor(W), Tensor(b)).data
    np.testing.assert_allclose(out, conv_oracle(x, W, b), rtol=1e-12, atol=1e-12)

    with pytest.raises(ValueError):
        conv3d_k2s2(Tensor(np.zeros((1, 3, 4, 4))), Tensor(kern), Tensor([0.0]))


def test_backward_simple_functionals(rng):
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(x)
    np.testing.assert_array_equal(backward(tape, loss)[x], np.ones((2, 3)))

    with Tape() as tape:
        loss = scale(reduce_sum(mul(x, x)), 0.5)
    np.testing.assert_allclose(backward(tape, loss)[x], x.data, rtol=1e-15)


def test_backward_rejects_non_scalar_and_zero_fills_untouched(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    unused = Tensor(rng.standard_normal(2), requires_grad=True)
    with Tape() as tape:
        y = scale(x, 2.0)
        loss = reduce_sum(y)
    with pytest.raises(ValueError):
        backward(tape, y)
    grads = backward(tape, loss, wrt=[x, unused])
    np.testing.assert_array_equal(grads[unused], 0.0)
    np.testing.assert_array_equal(grads[x], 2.0)


def test_no_recording_outside_tape(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    y = selu(x)
    assert not y.requires_grad


def test_tape_visits_each_node_once(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    with Tape() as tape:
        y = selu(x)
        z = add(y, y)  # y used twice: gradient must accumulate, not repeat
        loss = reduce_sum(z)
    assert len(tape) == 3
    g = backward(tape, loss)[x]
    h = 1e-6
    fd = [(np.sum(2 * selu(Tensor(x.data + h * e)).data)
           - np.sum(2 * selu(Tensor(x.data - h * e)).data)) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, rtol=1e-7)


GRAD_CASES = {
    "add": (lambda a, b: add(a, b), [(2, 3), (2, 3)]),
    "sub": (lambda a, b: sub(a, b), [(2, 3), (2, 3)]),
    "mul": (lambda a, b: mul(a, b), [(2, 3), (2, 3)]),
    "scale": (lambda a: scale(a, -1.7), [(4,)]),
    "selu": (selu, [(3, 2, 2, 2)]),
    "sigmoid": (sigmoid, [(3, 2, 2, 2)]),
    "channel_linear": (lambda x, W, b: channel_linear(x, W, b), [(3, 2, 2, 2), (4, 3), (4,)]),
    "concat": (concat_channels, [(1, 2, 2, 2), (2, 2, 2, 2)]),
    "split": (lambda x: split_channels(x, 1)[1], [(3, 2, 2, 2)]),
    "trilinear_up": (lambda x: trilinear_resample(x, (6, 4, 5)), [(2, 3, 2, 4)]),
    "trilinear_down": (lambda x: trilinear_resample(x, (2, 3, 2)), [(2, 4, 6, 4)]),
    "conv3d_k2s2": (lambda x, W, b: conv3d_k2s2(x, W, b), [(2, 4, 4, 2), (3, 2, 2, 2, 2), (3,)]),
    "reduce_sum": (reduce_sum, [(3, 3)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients(name, rng):
    fn, shapes = GRAD_CASES[name]
    inputs = [rng.standard_normal(s) for s in shapes]
    for res in check_gradients(fn, inputs, rng, max_coords=None, name=name):
        assert res.rel_error < 1e-5, res


LINEAR_OPS = {
    "channel_linear": lambda x, W: channel_linear(x, W),
    "concat": lambda x, W: concat_channels(x, x),
    "trilinear": lambda x, W: trilinear_resample(x, (5, 6, 3)),
    "conv3d_k2s2": lambda x, W: conv3d_k2s2(x, Tensor(np.arange(48.0).reshape(2, 3, 2, 2, 2) / 48)),
}


@pytest.mark.parametrize("name", sorted(LINEAR_OPS))
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(name, seed, a, b):
    r = np.random.default_rng(seed)
    op = LINEAR_OPS[name]
    W = Tensor(r.standard_normal((2, 3)))
    x, y = r.standard_normal((2, 3, 4, 4, 4))
    lhs = op(Tensor(a * x + b * y), W).data
    rhs = a * op(Tensor(x), W).data + b * op(Tensor(y), W).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_determinism(rng):
    x = rng.standard_normal((3, 8, 8, 8))
    W = rng.standard_normal((2, 3, 2, 2, 2))
    out1 = trilinear_resample(conv3d_k2s2(Tensor(x), Tensor(W)), (8, 8, 8)).data
    out2 = trilinear_resample(conv3d_k2s2(Tensor(x), Tensor(W)), (8, 8, 8)).data
    assert out1.tobytes() == out2.tobytes()


def test_finite_outputs_on_extreme_inputs():
    x = Tensor(np.array([-800.0, -1.0, 0.0, 1.0, 800.0]))
    assert np.all(np.isfinite(selu(x).data))
    assert np.all(np.isfinite(sigmoid(x).data))
