"""Dense layer primitives: im2col convolution, pooling, linear.

All functions are pure and batch-first: x is (B, C, H, W) or (B, D).
Backward functions take the cached forward input and the upstream gradient
and return input/parameter gradients with fixed summation order, so both
passes are bitwise reproducible.
"""

from __future__ import annotations

import numpy as np


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (B, C, H, W) into (B, C*k*k, OH*OW) patch columns."""
    b, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, padding)
    ow = conv_out_size(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, k, k, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw), writeable=False)
    return windows.reshape(b, c * k * k, oh * ow)


def col2im(cols: np.ndarray, x_shape: tuple, k: int, stride: int,
           padding: int) -> np.ndarray:
    """Fold (B, C*k*k, OH*OW) columns back, summing overlaps; inverse-adjoint
    of im2col."""
    b, c, h, w = x_shape
    oh = conv_out_size(h, k, stride, padding)
    ow = conv_out_size(w, k, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, oh, ow)
    for i in range(k):
        i_end = i + stride * oh
        for j in range(k):
            j_end = j + stride * ow
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
                   stride: int, padding: int) -> np.ndarray:
    """x (B, C_in, H, W), weight (C_out, C_in, k, k) -> (B, C_out, OH, OW)."""
    b = x.shape[0]
    c_out, c_in, k, _ = weight.shape
    oh = conv_out_size(x.shape[2], k, stride, padding)
    ow = conv_out_size(x.shape[3], k, stride, padding)
    cols = im2col(x, k, stride, padding)                     # (B, C_in*k*k, L)
    flat = cols.transpose(1, 0, 2).reshape(c_in * k * k, b * oh * ow)
    y = weight.reshape(c_out, -1) @ flat                     # (C_out, B*L)
    y = y.reshape(c_out, b, oh * ow).transpose(1, 0, 2).reshape(b, c_out, oh, ow)
    if bias is not None:
        y = y + bias[None, :, None, None]
    return y


def conv2d_backward(x: np.ndarray, weight: np.ndarray, dy: np.ndarray,
                    stride: int, padding: int, with_bias: bool,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients (dx, dweight, dbias) for conv2d_forward."""
    b = x.shape[0]
    c_out, c_in, k, _ = weight.shape
    oh, ow = dy.shape[2], dy.shape[3]
    dy_flat = dy.transpose(1, 0, 2, 3).reshape(c_out, b * oh * ow)
    cols = im2col(x, k, stride, padding)
    flat = cols.transpose(1, 0, 2).reshape(c_in * k * k, b * oh * ow)
    dw = (dy_flat @ flat.T).reshape(weight.shape)
    dcols = (weight.reshape(c_out, -1).T @ dy_flat)          # (C_in*k*k, B*L)
    dcols = dcols.reshape(c_in * k * k, b, oh * ow).transpose(1, 0, 2)
    dx = col2im(dcols, x.shape, k, stride, padding)
    db = dy.sum(axis=(0, 2, 3)) if with_bias else None
    return dx, dw, db


def avg_pool_forward(x: np.ndarray, window: int) -> np.ndarray:
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"pool window {window} does not divide {h}x{w}")
    return x.reshape(b, c, h // window, window, w // window, window).mean(axis=(3, 5))


def avg_pool_backward(dy: np.ndarray, window: int) -> np.ndarray:
    scaled = dy / (window * window)
    return np.repeat(np.repeat(scaled, window, axis=2), window, axis=3)


def global_pool_forward(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C) spatial mean."""
    return x.mean(axis=(2, 3))


def global_pool_backward(dy: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.broadcast_to(dy[:, :, None, None] / (h * w),
                           (dy.shape[0], dy.shape[1], h, w)).copy()


def linear_forward(x: np.ndarray, weight: np.ndarray,
                   bias: np.ndarray | None) -> np.ndarray:
    """x (B, D_in), weight (D_out, D_in) -> (B, D_out)."""
    y = x @ weight.T
    if bias is not None:
        y = y + bias[None, :]
    return y


def linear_backward(x: np.ndarray, weight: np.ndarray, dy: np.ndarray,
                    with_bias: bool,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    dx = dy @ weight
    dw = dy.T @ x
    db = dy.sum(axis=0) if with_bias else None
    return dx, dw, db
