import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from svretarget import tensor as T
from svretarget.tensor import ContractError, DimensionError, NumericError, Tape, Tensor


def _naive_conv(x, w, pad):
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((co, h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1))
    for o in range(co):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[o, i, j] = sum(xp[ci, i + a, j + b] * w[o, ci, a, b]
                                   for ci in range(c) for a in range(kh) for b in range(kw))
    return out


def test_identity_kernel_is_exact_in_double(rng):
    x = rng.normal(size=(1, 6, 7))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    out = T.conv2d(Tensor(x), Tensor(w), padding=1)
    assert np.array_equal(out.data, x)


def test_identity_kernel_single_precision(rng):
    x = rng.normal(size=(1, 6, 7)).astype(np.float32)
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1
    out = T.conv2d(Tensor(x), Tensor(w), padding=1)
    assert np.abs(out.data - x).max() <= 1e-6


def test_ones_kernel_sums_whole_image():
    x = np.ones((1, 5, 5))
    w = np.ones((1, 1, 11, 11))
    out = T.conv2d(Tensor(x), Tensor(w), padding=5).data
    assert np.array_equal(out, np.full((1, 5, 5), 25.0))
    assert np.array_equal(out, _naive_conv(x, w, 5))


def test_conv_matches_nested_loops(rng):
    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    assert np.allclose(T.conv2d(Tensor(x), Tensor(w), padding=1).data, _naive_conv(x, w, 1), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_matmul_examples(rng):
    a = rng.normal(size=(3, 4))
    assert np.array_equal(T.matmul(Tensor(a), Tensor(np.eye(4))).data, a)
    out = T.matmul(Tensor(np.array([[1.0, 2], [3, 4]])), Tensor(np.array([[1.0], [1]])))
    assert np.array_equal(out.data, [[3.0], [7.0]])
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    assert np.allclose(T.softmax(Tensor(np.zeros(5))).data, 0.2)
    big = T.softmax(Tensor(np.array([1000.0, 0.0, 0.0]))).data
    ref = np.exp(np.array([0, -1000, -1000], dtype=np.longdouble))
    ref /= ref.sum()
    assert np.all(np.isfinite(big)) and big[0] >= 1 - 1e-6
    assert np.allclose(big, ref.astype(np.float64))
    with pytest.raises(NumericError):
        T.softmax(Tensor(np.array([np.inf, 0.0])))


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1) <= 1e-6)


def test_bilinear_examples(rng):
    img = rng.normal(size=(2, 4, 5))
    assert np.array_equal(T.bilinear_sample(Tensor(img), 3, 2).data, img[:, 2, 3])
    ramp = Tensor(np.array([[[0.0, 1.0]]]))
    assert T.bilinear_sample(ramp, 0.5, 0).data[0] == 0.5
    assert np.array_equal(T.bilinear_sample(Tensor(img), -3.7, 1.5).data,
                          T.bilinear_sample(Tensor(img), 0, 1.5).data)


def test_backward_sum_and_square(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    with Tape() as tape:
        y = T.tsum(x)
    tape.backward(y)
    assert np.array_equal(x.grad, np.ones((3, 4)))
    x.zero_grad()
    with Tape() as tape:
        y = T.tsum(T.mul(x, x))
    tape.backward(y)
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_needs_scalar(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        y = T.mul(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_composite_conv_relu_sum_gradcheck(rng):
    x, w = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    report = T.gradcheck_report(lambda a, b: T.tsum(T.relu(T.conv2d(a, b, padding=1))), [x, w])
    assert report.passed()


def test_backward_is_deterministic(rng):
    x0, w0 = rng.normal(size=(2, 6, 6)), rng.normal(size=(4, 2, 3, 3))
    grads = []
    for _ in range(2):
        x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
        with Tape() as tape:
            y = T.tsum(T.softmax(T.conv2d(x, w, padding=1)))
        tape.backward(y)
        grads.append((x.grad.copy(), w.grad.copy()))
    assert all(np.array_equal(a, b) for a, b in zip(grads[0], grads[1]))


def test_rank_limit():
    with pytest.raises(DimensionError):
        Tensor(np.ones((1,) * 6))


def test_no_tape_records_nothing(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    y = T.mul(x, x)
    assert not y.requires_grad


def test_gradient_accumulates_across_uses(rng):
    x = Tensor(rng.normal(size=4), requires_grad=True)
    with Tape() as tape:
        y = T.add(T.tsum(x), T.tsum(T.mul(x, 3.0)))
    tape.backward(y)
    assert np.allclose(x.grad, 4.0)


@given(st.integers(1, 4), st.integers(2, 6), st.integers(2, 6))
def test_gradient_shape_matches_value(c, h, w):
    x = Tensor(np.linspace(-1, 1, c * h * w).reshape(c, h, w), requires_grad=True)
    with Tape() as tape:
        y = T.tsum(T.max_pool2d(T.relu(x), 2)) if h >= 2 and w >= 2 else T.tsum(x)
    tape.backward(y)
    assert x.grad.shape == x.shape


def test_gradcheck_flags_a_wrong_gradient(rng):
    def bad_square(x):
        out = T._result(x.data ** 2, (x,), lambda g: (g * 3 * x.data,))
        return T.tsum(out)

    assert not T.gradcheck_report(bad_square, [rng.normal(size=5) + 2]).passed()
