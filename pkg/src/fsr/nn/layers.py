"""Layer primitives with explicit forward/backward passes.

All tensors are NCHW numpy arrays. Forward functions return (output, cache)
and the matching backward consumes that cache. Convolution uses im2col with
per-group matrix products; max-pool resolves ties to the smallest row-major
window index so backward routing is deterministic.
"""

from __future__ import annotations

import numpy as np

from ..errors import LabelOutOfRangeError, ShapeError


def _check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"non-finite values produced by {where}")
    return x


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, H, W) padded input -> (N, C, kh, kw, ho, wo) patch view copy."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv_forward(x, w, b, stride=1, pad=0, groups=1):
    """Grouped cross-correlation. w: (out, in/groups, k, k), b: (out,)."""
    n, c, h, wdt = x.shape
    out_c, cg, kh, kw = w.shape
    if c % groups or out_c % groups or cg != c // groups:
        raise ShapeError(f"groups {groups} incompatible with channels {c}->{out_c}")
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(wdt, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv output {ho}x{wo} not positive")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = np.empty((n, out_c, ho, wo), dtype=x.dtype)
    og = out_c // groups
    for g in range(groups):
        a = cols[:, g * cg : (g + 1) * cg].reshape(n, cg * kh * kw, ho * wo)
        wg = w[g * og : (g + 1) * og].reshape(og, cg * kh * kw)
        y[:, g * og : (g + 1) * og] = (wg @ a).reshape(n, og, ho, wo)
    y += b.reshape(1, out_c, 1, 1)
    cache = (cols, x.shape, w, stride, pad, groups)
    return _check_finite(y, "conv"), cache


def conv_backward(cache, dy):
    cols, x_shape, w, stride, pad, groups = cache
    n, c, h, wdt = x_shape
    out_c, cg, kh, kw = w.shape
    _, _, ho, wo = dy.shape
    og = out_c // groups
    db = dy.sum(axis=(0, 2, 3))
    dw = np.empty_like(w)
    dcols = np.empty_like(cols)
    for g in range(groups):
        a = cols[:, g * cg : (g + 1) * cg].reshape(n, cg * kh * kw, ho * wo)
        dyg = dy[:, g * og : (g + 1) * og].reshape(n, og, ho * wo)
        dw[g * og : (g + 1) * og] = (
            np.einsum("nol,ncl->oc", dyg, a).reshape(og, cg, kh, kw)
        )
        wg = w[g * og : (g + 1) * og].reshape(og, cg * kh * kw)
        dcols[:, g * cg : (g + 1) * cg] = (wg.T @ dyg).reshape(n, cg, kh, kw, ho, wo)
    hp, wp = h + 2 * pad, wdt + 2 * pad
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    dx = dxp[:, :, pad : hp - pad, pad : wp - pad] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(cache, dy):
    # gradient at exactly 0 is defined as 0
    return dy * (cache > 0)


def maxpool_forward(x, kernel, stride):
    n, c, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, 0)
    wo = conv_out_size(w, kernel, stride, 0)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"maxpool output {ho}x{wo} not positive")
    cols = _im2col(x, kernel, kernel, stride, ho, wo)
    flat = cols.reshape(n, c, kernel * kernel, ho, wo)
    argmax = flat.argmax(axis=2)  # first max = smallest row-major window index
    y = np.take_along_axis(flat, argmax[:, :, None], axis=2)[:, :, 0]
    cache = (argmax, x.shape, kernel, stride, ho, wo)
    return y, cache


def maxpool_backward(cache, dy):
    argmax, x_shape, kernel, stride, ho, wo = cache
    n, c, h, w = x_shape
    dx = np.zeros(x_shape, dtype=dy.dtype)
    ni, ci, yi, xi = np.indices((n, c, ho, wo))
    rows = yi * stride + argmax // kernel
    cols = xi * stride + argmax % kernel
    np.add.at(dx, (ni, ci, rows, cols), dy)
    return dx


def _lrn_window_sum(x: np.ndarray, n_size: int) -> np.ndarray:
    """Sum over a channel window of size n_size centered per channel, clipped."""
    c = x.shape[1]
    half = n_size // 2
    out = np.zeros_like(x)
    for ch in range(c):
        lo = max(0, ch - half)
        hi = min(c, ch + half + 1)
        out[:, ch] = x[:, lo:hi].sum(axis=1)
    return out


def lrn_forward(x, n=5, alpha=1e-4, beta=0.75, k=1.0):
    s = _lrn_window_sum(x * x, n)
    denom = k + (alpha / n) * s
    scale = denom ** (-beta)
    y = x * scale
    return y, (x, denom, scale, n, alpha, beta)


def lrn_backward(cache, dy):
    x, denom, scale, n, alpha, beta = cache
    t = dy * x * denom ** (-beta - 1.0)
    return dy * scale - (2.0 * beta * alpha / n) * x * _lrn_window_sum(t, n)


def dropout_forward(x, keep_prob, mode, rng):
    """Inverted dropout: train scales by 1/keep_prob, eval is identity."""
    if mode == "train" and keep_prob < 1.0:
        mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / keep_prob
        return x * mask, mask
    return x, None


def dropout_backward(cache, dy):
    return dy if cache is None else dy * cache


def fc_forward(x, w, b):
    """Affine map on the flattened input. w: (out, in), b: (out,)."""
    n = x.shape[0]
    xf = x.reshape(n, -1)
    if xf.shape[1] != w.shape[1]:
        raise ShapeError(f"fc input {xf.shape[1]} vs weight {w.shape[1]}")
    y = xf @ w.T + b
    return _check_finite(y, "fc"), (xf, x.shape, w)


def fc_backward(cache, dy):
    xf, x_shape, w = cache
    dw = dy.T @ xf
    db = dy.sum(axis=0)
    dx = (dy @ w).reshape(x_shape)
    return dx, dw, db


def crop_forward(x, size, mode, rng):
    """Spatial crop: random top-left offset in train, centered in eval."""
    h, w = x.shape[2], x.shape[3]
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than input {h}x{w}")
    if mode == "train-random":
        oy = int(rng.integers(0, h - size + 1))
        ox = int(rng.integers(0, w - size + 1))
    else:
        oy = (h - size) // 2
        ox = (w - size) // 2
    y = x[:, :, oy : oy + size, ox : ox + size]
    return y, (x.shape, oy, ox, size)


def crop_backward(cache, dy):
    x_shape, oy, ox, size = cache
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, oy : oy + size, ox : ox + size] = dy
    return dx


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy with a numerically stable softmax.

    Returns (loss, probs, grad_logits) with grad_logits already divided by
    the batch size.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise LabelOutOfRangeError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, probs, grad
