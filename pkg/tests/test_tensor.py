import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypernet.tensor import (NonFiniteError, conv2d, conv2d_adjoint, conv2d_kernel_grad, init_kernel,
                             relu, relu_vjp)


def loop_conv(x, k, bias=None):
    """Quadruple-loop cross-correlation with explicit zero padding; the oracle."""
    c_in, h, w = x.shape
    c_out, _, s, _ = k.shape
    p = s // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for c in range(c_in):
                    for u in range(s):
                        for v in range(s):
                            ii, jj = i + u - p, j + v - p
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += k[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = acc + (0.0 if bias is None else bias[o])
    return out


def test_identity_kernel_passes_input_through(rng):
    x = rng.standard_normal((1, 5, 6))
    k = np.ones((1, 1, 1, 1))
    assert np.array_equal(conv2d(x, k, np.zeros(1)), x)


def test_all_ones_kernel_counts_padded_neighbours():
    out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)))
    assert out[0, 1, 1] == 9
    assert out[0, 0, 0] == out[0, 0, 2] == out[0, 2, 0] == out[0, 2, 2] == 4
    assert out[0, 0, 1] == 6


@pytest.mark.parametrize("size", [1, 3, 5])
def test_conv_matches_loop_oracle(rng, size):
    for shape in [(1, 1, 1), (2, 3, 4), (4, 8, 8)]:
        x = rng.standard_normal(shape)
        k = rng.standard_normal((3, shape[0], size, size))
        b = rng.standard_normal(3)
        ref = loop_conv(x, k, b)
        got = conv2d(x, k, b)
        assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_batched_conv_equals_per_sample(rng):
    x = rng.standard_normal((3, 2, 6, 5))
    k = rng.standard_normal((4, 2, 3, 3))
    batched = conv2d(x, k)
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv2d(x[i], k), rtol=0, atol=1e-13)


def test_conv_rejects_bad_shapes(rng):
    x = rng.standard_normal((2, 4, 4))
    with pytest.raises(ValueError):
        conv2d(x, np.ones((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        conv2d(x, np.ones((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        conv2d_adjoint(x, np.ones((3, 1, 3, 3)))


def test_nonfinite_input_is_an_error():
    x = np.ones((1, 3, 3))
    x[0, 1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        conv2d(x, np.ones((1, 1, 3, 3)))


def test_adjoint_of_identity_and_zero(rng):
    y = rng.standard_normal((2, 4, 4))
    eye = np.zeros((2, 2, 1, 1))
    eye[0, 0] = eye[1, 1] = 1
    assert np.array_equal(conv2d_adjoint(y, eye), y)
    k = rng.standard_normal((2, 3, 3, 3))
    assert not conv2d_adjoint(np.zeros((2, 4, 4)), k).any()


@given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), h=st.integers(1, 9), w=st.integers(1, 9),
       size=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**31))
def test_dot_product_adjoint_identity(c_in, c_out, h, w, size, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((c_in, h, w))
    y = r.standard_normal((c_out, h, w))
    k = r.standard_normal((c_out, c_in, size, size))
    lhs = np.vdot(conv2d(x, k), y)
    rhs = np.vdot(x, conv2d_adjoint(y, k))
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1)


def test_kernel_grad_matches_finite_differences(rng):
    x = rng.standard_normal((2, 2, 5, 5))
    gy = rng.standard_normal((2, 3, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    g = conv2d_kernel_grad(x, gy, 3)
    # <gy, conv(x, k)> is linear in k, so the gradient is exact
    fd = np.zeros_like(k)
    for idx in np.ndindex(k.shape):
        e = np.zeros_like(k)
        e[idx] = 1.0
        fd[idx] = np.vdot(gy, conv2d(x, e))
    np.testing.assert_allclose(g, fd, rtol=1e-12, atol=1e-12)


def test_relu_examples():
    x = np.array([-1.0, 0.0, 2.0])
    assert relu(x).tolist() == [0, 0, 2]
    assert relu_vjp(x, np.full(3, 5.0)).tolist() == [0, 0, 5]


def test_relu_vjp_matches_finite_differences_away_from_kink(rng):
    x = rng.standard_normal(200)
    x = x[np.abs(x) > 1e-3]
    h = 1e-6
    fd = (relu(x + h) - relu(x - h)) / (2 * h)
    got = relu_vjp(x, np.ones_like(x))
    np.testing.assert_allclose(got, fd, rtol=1e-6)


def test_init_kernel_bound_and_determinism():
    k1 = init_kernel(np.random.default_rng(5), 8, 4, 3)
    k2 = init_kernel(np.random.default_rng(5), 8, 4, 3)
    assert np.array_equal(k1, k2)
    assert np.abs(k1).max() <= 1 / np.sqrt(36)
    assert init_kernel(np.random.default_rng(5), 2, 2, 3, np.float32).dtype == np.float32
