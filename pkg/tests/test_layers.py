"""Dense primitives against naive loop oracles and finite differences."""

import numpy as np
import pytest

from evsnn.nn.layers import (
    avg_pool_backward,
    avg_pool_forward,
    col2im,
    conv2d_backward,
    conv2d_forward,
    conv_out_size,
    global_pool_backward,
    global_pool_forward,
    im2col,
    linear_backward,
    linear_forward,
)


def conv_oracle(x, weight, bias, stride, padding):
    """Quadruple-loop reference convolution."""
    b, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    oh = conv_out_size(h, k, stride, padding)
    ow = conv_out_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    y = np.zeros((b, c_out, oh, ow))
    for n in range(b):
        for co in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride:i * stride + k,
                               j * stride:j * stride + k]
                    y[n, co, i, j] = (patch * weight[co]).sum()
            if bias is not None:
                y[n, co] += bias[co]
    return y


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = f()
        flat[i] = keep - eps
        dn = f()
        flat[i] = keep
        gf[i] = (up - dn) / (2 * eps)
    return g


CONV_CASES = [
    # (c_in, c_out, k, stride, padding, h, w)
    (1, 1, 1, 1, 0, 3, 3),
    (2, 3, 3, 1, 1, 5, 4),
    (2, 4, 3, 2, 1, 6, 6),
    (3, 2, 5, 2, 2, 7, 5),
]


class TestConvForward:
    @pytest.mark.parametrize("c_in,c_out,k,stride,padding,h,w", CONV_CASES)
    def test_matches_loop_oracle(self, c_in, c_out, k, stride, padding, h, w, rng):
        x = rng.normal(size=(2, c_in, h, w))
        weight = rng.normal(size=(c_out, c_in, k, k))
        bias = rng.normal(size=c_out)
        got = conv2d_forward(x, weight, bias, stride, padding)
        np.testing.assert_allclose(got, conv_oracle(x, weight, bias, stride, padding),
                                   rtol=1e-12, atol=1e-12)

    def test_no_bias(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        weight = rng.normal(size=(3, 2, 3, 3))
        got = conv2d_forward(x, weight, None, 1, 1)
        np.testing.assert_allclose(got, conv_oracle(x, weight, None, 1, 1),
                                   rtol=1e-12, atol=1e-12)

    def test_identity_kernel(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        weight = np.ones((1, 1, 1, 1))
        np.testing.assert_array_equal(conv2d_forward(x, weight, None, 1, 0), x)

    def test_deterministic_bytes(self, rng):
        x = rng.normal(size=(2, 2, 5, 5))
        weight = rng.normal(size=(3, 2, 3, 3))
        a = conv2d_forward(x, weight, None, 2, 1)
        b = conv2d_forward(x, weight, None, 2, 1)
        assert a.tobytes() == b.tobytes()


class TestColOps:
    def test_im2col_shape(self, rng):
        x = rng.normal(size=(2, 3, 6, 5))
        cols = im2col(x, 3, 2, 1)
        oh, ow = conv_out_size(6, 3, 2, 1), conv_out_size(5, 3, 2, 1)
        assert cols.shape == (2, 3 * 9, oh * ow)

    @pytest.mark.parametrize("k,stride,padding", [(1, 1, 0), (3, 1, 1), (3, 2, 1),
                                                  (2, 2, 0)])
    def test_adjoint_identity(self, k, stride, padding, rng):
        # <im2col(x), c> == <x, col2im(c)> for all x, c: the pair is adjoint
        shape = (2, 2, 6, 6)
        x = rng.normal(size=shape)
        cols = im2col(x, k, stride, padding)
        c = rng.normal(size=cols.shape)
        lhs = float((cols * c).sum())
        rhs = float((x * col2im(c, shape, k, stride, padding)).sum())
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_col2im_counts_overlaps(self):
        # folding all-ones columns counts how many windows cover each pixel
        shape = (1, 1, 3, 3)
        cols = np.ones((1, 9, 9))
        out = col2im(cols, shape, 3, 1, 1)
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
        np.testing.assert_array_equal(out[0, 0], expected)


class TestConvBackward:
    @pytest.mark.parametrize("c_in,c_out,k,stride,padding,h,w", CONV_CASES)
    def test_matches_fd(self, c_in, c_out, k, stride, padding, h, w, rng):
        x = rng.normal(size=(2, c_in, h, w))
        weight = rng.normal(size=(c_out, c_in, k, k))
        bias = rng.normal(size=c_out)
        proj = rng.normal(size=conv2d_forward(x, weight, bias, stride, padding).shape)

        def loss():
            return float((conv2d_forward(x, weight, bias, stride, padding) * proj).sum())

        dx, dw, db = conv2d_backward(x, weight, proj, stride, padding, with_bias=True)
        np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(dw, fd_grad(loss, weight), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(db, fd_grad(loss, bias), rtol=1e-6, atol=1e-8)

    def test_no_bias_grad(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        weight = rng.normal(size=(2, 2, 3, 3))
        dy = rng.normal(size=(1, 2, 4, 4))
        _, _, db = conv2d_backward(x, weight, dy, 1, 1, with_bias=False)
        assert db is None


class TestPooling:
    def test_avg_pool_hand_case(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(avg_pool_forward(x, 2), [[[[2.5]]]])

    def test_avg_pool_indivisible(self):
        with pytest.raises(ValueError, match="divide"):
            avg_pool_forward(np.zeros((1, 1, 5, 4)), 2)

    def test_avg_pool_fd(self, rng):
        x = rng.normal(size=(2, 3, 4, 6))
        proj = rng.normal(size=(2, 3, 2, 3))

        def loss():
            return float((avg_pool_forward(x, 2) * proj).sum())

        np.testing.assert_allclose(avg_pool_backward(proj, 2), fd_grad(loss, x),
                                   rtol=1e-6, atol=1e-9)

    def test_global_pool(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        np.testing.assert_allclose(global_pool_forward(x), x.mean(axis=(2, 3)))
        proj = rng.normal(size=(2, 3))

        def loss():
            return float((global_pool_forward(x) * proj).sum())

        np.testing.assert_allclose(global_pool_backward(proj, 4, 5),
                                   fd_grad(loss, x), rtol=1e-6, atol=1e-9)


class TestLinear:
    def test_forward_oracle(self, rng):
        x = rng.normal(size=(4, 6))
        weight = rng.normal(size=(3, 6))
        bias = rng.normal(size=3)
        want = np.array([[x[n] @ weight[o] + bias[o] for o in range(3)]
                         for n in range(4)])
        np.testing.assert_allclose(linear_forward(x, weight, bias), want,
                                   rtol=1e-12)

    def test_backward_fd(self, rng):
        x = rng.normal(size=(4, 6))
        weight = rng.normal(size=(3, 6))
        bias = rng.normal(size=3)
        proj = rng.normal(size=(4, 3))

        def loss():
            return float((linear_forward(x, weight, bias) * proj).sum())

        dx, dw, db = linear_backward(x, weight, proj, with_bias=True)
        np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(dw, fd_grad(loss, weight), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(db, fd_grad(loss, bias), rtol=1e-6, atol=1e-9)
