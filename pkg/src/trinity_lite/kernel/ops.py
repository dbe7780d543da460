"""Differentiable array ops: convolution, pooling, upsampling, ReLU.

All ops are dtype-generic (float32 in production, float64 under the
finite-difference tests) and operate on (channels, height, width) arrays
without a batch axis; callers loop over examples.
"""

from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray) -> np.ndarray:
    """3x3 zero-padded patches as a (9*cin, h*w) matrix, kernel-position major."""
    cin, h, w = x.shape
    xp = np.zeros((cin, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((9 * cin, h * w), dtype=x.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[k * cin:(k + 1) * cin] = xp[:, dy:dy + h, dx:dx + w].reshape(cin, -1)
            k += 1
    return cols


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1, zero-padded 3x3 convolution; w is (cout, cin, 3, 3)."""
    cout, cin = w.shape[:2]
    _, h, wd = x.shape
    wmat = w.transpose(0, 2, 3, 1).reshape(cout, 9 * cin)
    out = wmat @ _im2col(x) + b[:, None]
    return out.reshape(cout, h, wd)


def conv3x3_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    """Gradients (dx, dw, db) given the upstream gradient dout."""
    cout, cin = w.shape[:2]
    _, h, wd = x.shape
    cols = _im2col(x)
    dflat = dout.reshape(cout, -1)
    db = dflat.sum(axis=1)
    dwmat = dflat @ cols.T
    dw = dwmat.reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
    dcols = w.transpose(0, 2, 3, 1).reshape(cout, 9 * cin).T @ dflat
    dxp = np.zeros((cin, h + 2, wd + 2), dtype=x.dtype)
    k = 0
    for dy in range(3):
        for dx_ in range(3):
            dxp[:, dy:dy + h, dx_:dx_ + wd] += dcols[k * cin:(k + 1) * cin].reshape(cin, h, wd)
            k += 1
    return dxp[:, 1:-1, 1:-1], dw, db


def conv1x1_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise convolution; w is (cout, cin)."""
    cin, h, wd = x.shape
    return (w @ x.reshape(cin, -1) + b[:, None]).reshape(w.shape[0], h, wd)


def conv1x1_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    cin, h, wd = x.shape
    dflat = dout.reshape(w.shape[0], -1)
    db = dflat.sum(axis=1)
    dw = dflat @ x.reshape(cin, -1).T
    dx = (w.T @ dflat).reshape(cin, h, wd)
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pool; returns (out, argmax) with ties to the first position."""
    c, h, w = x.shape
    r = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4)
    idx = r.argmax(axis=3)
    out = np.take_along_axis(r, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2_backward(dout: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    c, h, w = in_shape
    dr = np.zeros((c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=3)
    return dr.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsample."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dout: np.ndarray) -> np.ndarray:
    c, h, w = dout.shape
    return dout.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x_pre: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * (x_pre > 0)
