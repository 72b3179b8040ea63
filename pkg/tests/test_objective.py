import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hnoseg.gradcheck import check_gradients
from hnoseg.objective import dice, mse, pcc_loss
from hnoseg.tensor import Tensor


def mixed_truth(rng, labels=2, shape=(16, 16, 16)):
    y = (rng.random((labels,) + shape) < 0.5).astype(float)
    y[:, 0, 0, 0] = 0
    y[:, 0, 0, 1] = 1
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def test_pcc_anchor_values(rng):
    y = mixed_truth(rng)
    assert pcc_loss(Tensor(y), y).item() == pytest.approx(0.0, abs=1e-12)
    assert pcc_loss(Tensor(1 - y), y).item() == pytest.approx(1.0, abs=1e-12)
    assert pcc_loss(Tensor(np.full(y.shape, 0.5)), y).item() == pytest.approx(0.5, abs=1e-12)


def test_pcc_missing_label_is_half(rng):
    y = np.zeros((1, 8, 8, 8))
    with np.errstate(all="raise"):
        assert pcc_loss(Tensor(np.full(y.shape, 0.3)), y).item() == 0.5
        # non-constant prediction on a missing label is still 0.5 (zero covariance)
        assert pcc_loss(Tensor(rng.random(y.shape)), y).item() == pytest.approx(0.5, abs=1e-12)


def test_pcc_rejects_out_of_range(rng):
    y = mixed_truth(rng, shape=(4, 4, 4))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        pcc_loss(Tensor(y * 1.5), y)
    with pytest.raises(ValueError):
        pcc_loss(Tensor(y), y * 0.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(0.05, 1.0), b=st.floats(0.0, 1.0))
def test_pcc_range_and_affine_invariance(seed, a, b):
    r = np.random.default_rng(seed)
    y = mixed_truth(r, labels=3, shape=(8, 8, 8))
    p = r.random(y.shape)
    loss = pcc_loss(Tensor(p), y).item()
    assert 0.0 <= loss <= 1.0
    b = b * (1 - a)  # keep a*p + b inside [0, 1]
    scaled = pcc_loss(Tensor(a * p + b), y).item()
    # the eps guard breaks exact invariance; it is negligible at this scale
    assert scaled == pytest.approx(loss, abs=1e-6)


def test_pcc_label_order_symmetry(rng):
    y = mixed_truth(rng, labels=3, shape=(6, 6, 6))
    p = rng.random(y.shape)
    perm = [2, 0, 1]
    assert pcc_loss(Tensor(p[perm]), y[perm]).item() == pytest.approx(
        pcc_loss(Tensor(p), y).item(), abs=1e-15)


def test_pcc_gradient(rng):
    y = mixed_truth(rng, labels=3, shape=(4, 4, 4))
    p = rng.uniform(0.05, 0.95, y.shape)
    res = check_gradients(lambda t: pcc_loss(t, y), [p], rng, max_coords=None)
    assert res[0].rel_error < 1e-5


def test_dice_examples():
    y = np.zeros((2, 4, 4, 4))
    y[0, :2] = 1
    y[1, :, :1] = 1
    np.testing.assert_array_equal(dice(y, y), [1.0, 1.0])

    disjoint = np.zeros_like(y)
    disjoint[0, 2:] = 1
    assert dice(disjoint[:1], y[:1])[0] == 0.0

    half = np.zeros_like(y)
    half[0, 1:3] = 1  # overlaps y[0] on one of its two slabs
    assert dice(half[:1], y[:1])[0] == pytest.approx(0.5)

    empty = np.zeros((1, 2, 2, 2))
    assert dice(empty, empty)[0] == 1.0


def test_mse_examples(rng):
    a = rng.standard_normal((2, 3, 4))
    assert mse(a, a) == 0.0
    assert mse(a + 1, a) == pytest.approx(1.0, abs=1e-15)
    b = rng.standard_normal(a.shape)
    acc = 0.0
    for v1, v2 in zip(a.reshape(-1), b.reshape(-1)):
        acc += (v1 - v2) ** 2
    assert mse(a, b) == pytest.approx(acc / a.size, rel=1e-13)
    with pytest.raises(ValueError):
        mse(a, b[:1])
