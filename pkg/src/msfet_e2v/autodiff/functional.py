"""Differentiable neural-network operators on ``Tensor``.

Images are channel-first ``[C, H, W]`` with no batch axis.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, _result, as_tensor

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    pass


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation: ``[C_in,H,W] -> [C_out,H',W']``."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] input and [O,C,k,k] weight, got {x.shape}, {weight.shape}")
    c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    k, s, p = kh, stride, padding
    ho, wo = conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    w2 = weight.data.reshape(o, -1)
    out = (w2 @ cols).reshape(o, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def bw(g):
        g2 = g.reshape(o, -1)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, ho, wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[:, i, j]
            gx = dxp[:, p : p + h, p : p + w] if p else dxp
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw)


# -- activations --------------------------------------------------------------

def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    y = x.data * s
    return _result(y, (x,), lambda g: (g * (s + y * (1.0 - s)),))


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, ``x * Phi(x)``."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    y = x.data * cdf

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(y, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return (gx, gg, gbeta)

    return _result(out, (x, gamma, beta), bw)


# -- resampling ---------------------------------------------------------------

def _upsample_matrix(n: int, dtype) -> np.ndarray:
    # align_corners=False: output i samples input at (i + 0.5) / 2 - 0.5
    src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    m = np.zeros((2 * n, n), dtype=dtype)
    rows = np.arange(2 * n)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    _, h, w = x.shape
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    out = uh @ x.data @ uw.T
    return _result(out, (x,), lambda g: (uh.T @ g @ uw,))


def _warp_coords(flow: np.ndarray, h: int, w: int):
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = np.clip(xs + flow[0], 0.0, w - 1)
    sy = np.clip(ys + flow[1], 0.0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    wts = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    return idx, wts


def bilinear_warp(img: Tensor, flow) -> Tensor:
    """Backward warp: ``out(p) = img(p + flow(p))`` with border clamping.

    ``flow`` is ``[2,H,W]`` holding (dx, dy) and is treated as data.
    """
    flow = flow.data if isinstance(flow, Tensor) else np.asarray(flow)
    c, h, w = img.shape
    if flow.shape != (2, h, w):
        raise ShapeError(f"flow shape {flow.shape} does not match image {img.shape}")
    idx, wts = _warp_coords(flow, h, w)
    wts = [wt.astype(img.dtype) for wt in wts]
    flat = img.data.reshape(c, h * w)
    out = sum(flat[:, i.ravel()].reshape(c, h, w) * wt for i, wt in zip(idx, wts))

    def bw(g):
        gflat = np.zeros((c, h * w), dtype=g.dtype)
        for i, wt in zip(idx, wts):
            contrib = (g * wt).reshape(c, -1)
            for ch in range(c):
                gflat[ch] += np.bincount(i.ravel(), weights=contrib[ch], minlength=h * w)
        return (gflat.reshape(c, h, w),)

    return _result(out.astype(img.dtype), (img,), bw)


def pad_reflect(x: Tensor, bottom: int, right: int) -> Tensor:
    """Reflect-pad the last two axes on the bottom and right edges."""
    if bottom == 0 and right == 0:
        return x
    h, w = x.shape[-2:]
    ri = np.pad(np.arange(h), (0, bottom), mode="reflect" if h > 1 else "edge")
    ci = np.pad(np.arange(w), (0, right), mode="reflect" if w > 1 else "edge")
    out = x.data[..., ri, :][..., ci]

    def bw(g):
        gr = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        np.add.at(gr, (..., ri, slice(None)), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (..., ci), gr)
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    from .tensor import concat as _concat

    return _concat(tensors, axis)


__all__ = [
    "ShapeError",
    "as_tensor",
    "bilinear_upsample2x",
    "bilinear_warp",
    "concat",
    "conv2d",
    "conv_output_size",
    "gelu",
    "layer_norm",
    "leaky_relu",
    "linear",
    "pad_reflect",
    "sigmoid",
    "softmax",
    "swish",
    "tanh",
]
