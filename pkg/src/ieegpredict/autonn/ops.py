"""Differentiable primitives on float64 arrays in (N, C, H, W) layout.

Every forward has a matching ``*_backward`` returning exact gradients.
Single samples in (C, H, W) layout are accepted by the conv and pool ops.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import expit

BCE_EPS = 1e-12


class ShapeError(ValueError):
    pass


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")
    return x, False


# -- convolution ----------------------------------------------------------------
#
# "Same" padding, stride 1. Each padded image is laid out flat with the batch
# concatenated along one axis, so a kernel offset (i, j) is a plain column
# shift of i * Wp + j: every tap becomes one GEMM on a strided view, without
# an im2col copy. Positions that straddle the padding are computed and dropped.


def _flat_padded(x: np.ndarray, ph: int, pw: int) -> tuple[np.ndarray, int, int, int]:
    n, c, h, w = x.shape
    hp, wp = h + 2 * ph, w + 2 * pw
    t = n * hp * wp
    flat = np.zeros((c, t + 2 * ph * wp + 2 * pw))
    flat[:, :t].reshape(c, n, hp, wp)[:, :, ph:ph + h, pw:pw + w] = x.transpose(1, 0, 2, 3)
    return flat, hp, wp, t


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None):
    if w.ndim != 4:
        raise ShapeError(f"kernel must be (out, in, kh, kw), got {w.shape}")
    co, ci, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel sides must be odd for same padding, got {kh}x{kw}")
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {ci}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"bias shape {b.shape} != ({co},)")


def conv2d(x, w, b) -> np.ndarray:
    """Cross-correlation with zero "same" padding, stride 1, plus bias."""
    x, single = _batched(x)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_conv(x, w, b)
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    if kh == 1 and kw == 1:
        y = np.matmul(w[:, :, 0, 0], x.reshape(n, ci, h * wd)).reshape(n, co, h, wd)
    else:
        ph, pw = kh // 2, kw // 2
        flat, hp, wp, t = _flat_padded(x, ph, pw)
        taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
        out = np.zeros((co, t))
        tmp = np.empty((co, t))
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                np.matmul(taps[i, j], flat[:, off:off + t], out=tmp)
                out += tmp
        y = out.reshape(co, n, hp, wp)[:, :, :h, :wd].transpose(1, 0, 2, 3)
    y = y + b[:, None, None]
    return y[0] if single else np.ascontiguousarray(y)


def conv2d_backward(dy, x, w, need_dx: bool = True):
    """Gradients (dx, dw, db) of conv2d for upstream gradient dy.

    With ``need_dx=False`` the input gradient is skipped and returned as None.
    """
    x, single = _batched(x)
    dy, _ = _batched(dy)
    w = np.asarray(w, dtype=np.float64)
    _check_conv(x, w)
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    if dy.shape != (n, co, h, wd):
        raise ShapeError(f"upstream gradient shape {dy.shape} != {(n, co, h, wd)}")
    db = dy.sum(axis=(0, 2, 3))
    if kh == 1 and kw == 1:
        dyr = dy.reshape(n, co, h * wd)
        xr = x.reshape(n, ci, h * wd)
        dw = np.einsum("nop,ncp->oc", dyr, xr, optimize=True)[:, :, None, None]
        if not need_dx:
            return None, np.ascontiguousarray(dw), db
        dx = np.matmul(w[:, :, 0, 0].T, dyr).reshape(n, ci, h, wd)
    else:
        ph, pw = kh // 2, kw // 2
        flat, hp, wp, t = _flat_padded(x, ph, pw)
        grid = np.zeros((co, n, hp, wp))
        grid[:, :, :h, :wd] = dy.transpose(1, 0, 2, 3)
        grid = grid.reshape(co, t)
        taps_t = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # kh, kw, ci, co
        dflat = np.zeros_like(flat)
        dw = np.empty((kh, kw, co, ci))
        tmp = np.empty((ci, t))
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                window = flat[:, off:off + t]
                np.matmul(grid, window.T, out=dw[i, j])
                if need_dx:
                    np.matmul(taps_t[i, j], grid, out=tmp)
                    dflat[:, off:off + t] += tmp
        dw = dw.transpose(2, 3, 0, 1)
        if not need_dx:
            return None, np.ascontiguousarray(dw), db
        dx = dflat[:, :t].reshape(ci, n, hp, wp)[:, :, ph:ph + h, pw:pw + wd].transpose(1, 0, 2, 3)
    dx = np.ascontiguousarray(dx)
    return (dx[0] if single else dx), np.ascontiguousarray(dw), db


# -- max pooling -------------------------------------------------------------------


def _pool_windows(x, size: int):
    if size % 2 == 0:
        raise ShapeError("pool size must be odd for same padding")
    p = size // 2
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    return [xp[:, :, i:i + h, j:j + w] for i in range(size) for j in range(size)]


def maxpool2d_max(x, size: int = 3) -> np.ndarray:
    """Forward values only of maxpool2d."""
    x, single = _batched(x)
    windows = _pool_windows(x, size)
    y = windows[0].copy()
    for cand in windows[1:]:
        np.maximum(y, cand, out=y)
    return y[0] if single else y


def maxpool2d_argmax(x, y, size: int = 3) -> np.ndarray:
    """Winning window offset of each output of maxpool2d; ties keep the first offset."""
    x, single = _batched(x)
    y, _ = _batched(y)
    windows = _pool_windows(x, size)
    # scan offsets backwards so the earliest maximal offset is written last
    arg = np.zeros(y.shape, dtype=np.int16)
    for k in range(size * size - 1, -1, -1):
        np.copyto(arg, k, where=windows[k] == y)
    return arg[0] if single else arg


def maxpool2d(x, size: int = 3):
    """Window maximum, stride 1, same padding (padding never wins).

    Returns ``(y, argmax)`` where argmax holds the winning window offset in
    row-major order; ties keep the first offset.
    """
    y = maxpool2d_max(x, size)
    return y, maxpool2d_argmax(x, y, size)


def maxpool2d_backward(dy, argmax, size: int = 3):
    dy, single = _batched(dy)
    if argmax.ndim == 3:
        argmax = argmax[np.newaxis]
    p = size // 2
    n, c, h, w = dy.shape
    hp, wp = h + 2 * p, w + 2 * p
    # flat index of each winner inside the padded plane stack
    base = (np.arange(n * c)[:, None, None] * (hp * wp)
            + np.arange(h)[None, :, None] * wp + np.arange(w)[None, None, :])
    di, dj = np.divmod(argmax.reshape(n * c, h, w).astype(np.int64), size)
    idx = base + di * wp + dj
    dxp = np.bincount(idx.ravel(), weights=dy.ravel(), minlength=n * c * hp * wp)
    dx = dxp.reshape(n, c, hp, wp)[:, :, p:p + h, p:p + w]
    return np.ascontiguousarray(dx[0] if single else dx)


# -- dense, activations, reshaping ----------------------------------------------------


def dense(x, w, b) -> np.ndarray:
    """Affine map of row vectors: x (N, in) -> (N, out) with w (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense input width {x.shape[-1]} != weight input width {w.shape[1]}")
    return x @ w.T + b


def dense_backward(dy, x, w):
    dy = np.asarray(dy, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return dy @ w, np.outer(dy, x), dy.copy()
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy, x) -> np.ndarray:
    return np.where(np.asarray(x) > 0, dy, 0.0)


def sigmoid(x) -> np.ndarray:
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_backward(dy, y) -> np.ndarray:
    """Gradient through sigmoid given its output y."""
    return dy * y * (1.0 - y)


def concat(tensors, axis: int = 1) -> np.ndarray:
    tensors = [np.asarray(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] != ref[:ax] or t.shape[ax + 1:] != ref[ax + 1:]:
            raise ShapeError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    return np.concatenate(tensors, axis=axis)


def split(x, sizes, axis: int = 1) -> list[np.ndarray]:
    """Inverse of concat: cut x into pieces of the given sizes."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not sum to {x.shape[axis]}")
    return np.split(x, np.cumsum(sizes)[:-1], axis=axis)


def flatten(x) -> np.ndarray:
    """Row-major flatten of everything but the batch axis."""
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1)


# -- loss -------------------------------------------------------------------------------


class BCEResult(NamedTuple):
    loss: np.ndarray
    grad: np.ndarray
    n_clamped: int


def weighted_bce(p, y, w_pos: float, eps: float = BCE_EPS) -> BCEResult:
    """Per-sample L = -[w_pos * y * ln p + (1 - y) * ln(1 - p)] and dL/dp.

    Probabilities outside [eps, 1 - eps] are clamped; the count is reported.
    """
    if not w_pos > 0:
        raise ValueError(f"w_pos must be positive, got {w_pos}")
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    clipped = np.clip(p, eps, 1.0 - eps)
    n_clamped = int(np.count_nonzero(clipped != p))
    loss = -(w_pos * y * np.log(clipped) + (1 - y) * np.log1p(-clipped))
    grad = -w_pos * y / clipped + (1 - y) / (1 - clipped)
    return BCEResult(loss, grad, n_clamped)


def weighted_bce_with_logits(z, y, w_pos: float):
    """Same loss as weighted_bce(sigmoid(z)) computed stably from logits.

    Returns ``(loss, dL/dz)`` per sample.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # softplus(-z) = -ln sigmoid(z), softplus(z) = -ln(1 - sigmoid(z))
    sp_neg = np.logaddexp(0.0, -z)
    sp_pos = np.logaddexp(0.0, z)
    loss = w_pos * y * sp_neg + (1 - y) * sp_pos
    p = sigmoid(z)
    grad = w_pos * y * (p - 1.0) + (1 - y) * p
    return loss, grad
