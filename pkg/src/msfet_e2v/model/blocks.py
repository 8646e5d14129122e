"""Network building blocks as functions of (weights, prefix, inputs).

All feature maps are ``[C, H, W]``; token sequences are ``[n, D]``.
"""
from __future__ import annotations

import math

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import Tensor, concat
from ..wavelet import SubbandSet, dwt2, iwt2
from .config import ModelConfig


def conv(W, name: str, x: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    w = W[f"{name}.weight"]
    k = w.shape[-1]
    return F.conv2d(x, w, W[f"{name}.bias"], stride, k // 2 if padding is None else padding)


def linear(W, name: str, x: Tensor) -> Tensor:
    return F.linear(x, W[f"{name}.weight"], W[f"{name}.bias"])


def residual_block(W, name: str, x: Tensor) -> Tensor:
    """``x + conv2(swish(conv1(x)))``; no activation after the last conv."""
    return x + conv(W, f"{name}.conv2", F.swish(conv(W, f"{name}.conv1", x)))


def head_forward(W, voxel: Tensor) -> Tensor:
    return conv(W, "head", voxel)


def downconv_forward(W, cfg: ModelConfig, x: Tensor) -> list[Tensor]:
    feats = []
    for i in range(1, cfg.depth + 1):
        x = F.leaky_relu(conv(W, f"down{i}", x, stride=2, padding=1), cfg.leaky_slope)
        feats.append(x)
    return feats


def zero_state(channels: int, h: int, w: int, dtype) -> tuple[Tensor, Tensor]:
    z = np.zeros((channels, h, w), dtype=dtype)
    return Tensor(z, dtype=dtype), Tensor(z, dtype=dtype)


def convlstm_step(W, name: str, x: Tensor, state=None):
    """One ConvLSTM update; returns ``(h_new, (h_new, c_new))``."""
    c = x.shape[0]
    if state is None:
        state = zero_state(c, x.shape[1], x.shape[2], x.dtype)
    h_prev, c_prev = state
    if h_prev.shape != x.shape:
        raise ValueError(f"recurrent state {h_prev.shape} does not match input {x.shape}; reset the state")
    gates = conv(W, f"{name}.lstm", concat([x, h_prev], axis=0))
    i = F.sigmoid(gates[:c])
    f = F.sigmoid(gates[c : 2 * c])
    o = F.sigmoid(gates[2 * c : 3 * c])
    g = F.tanh(gates[3 * c :])
    c_new = f * c_prev + i * g
    h_new = o * F.tanh(c_new)
    return h_new, (h_new, c_new)


def patch_embed(W, name: str, cfg: ModelConfig, scale: int, x: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """Overlapping patch embedding onto the coarsest grid; returns tokens [n, D] and (h', w')."""
    k, s, p = cfg.patch_geometry(scale)
    y = conv(W, name, x, stride=s, padding=p)
    d, h, w = y.shape
    return y.reshape(d, h * w).T, (h, w)


def tokens_to_grid(tokens: Tensor, hw: tuple[int, int]) -> Tensor:
    return tokens.T.reshape(tokens.shape[1], hw[0], hw[1])


def multi_head_attention(W, name: str, cfg: ModelConfig, query_tokens: Tensor, kv_tokens: Tensor):
    """Queries from one token set, keys/values from another.

    Returns the output-projected result and the attention probabilities
    ``[heads, n, n]``.
    """
    n, d = query_tokens.shape
    nh, dh = cfg.heads, cfg.head_dim
    q = linear(W, f"{name}.q", query_tokens).reshape(n, nh, dh).transpose(1, 0, 2)
    k = linear(W, f"{name}.k", kv_tokens).reshape(n, nh, dh).transpose(1, 0, 2)
    v = linear(W, f"{name}.v", kv_tokens).reshape(n, nh, dh).transpose(1, 0, 2)
    return attend(W, name, cfg, q, k, v)


def attend(W, name: str, cfg: ModelConfig, q: Tensor, k: Tensor, v: Tensor):
    nh, n, dh = q.shape
    scale = 1.0 / math.sqrt(cfg.embed_dim if cfg.attn_scale == "model" else dh)
    probs = F.softmax((q @ k.transpose(0, 2, 1)) * scale, axis=-1)
    out = (probs @ v).transpose(1, 0, 2).reshape(n, nh * dh)
    return linear(W, f"{name}.o", out), probs


def ffn(W, name: str, x: Tensor) -> Tensor:
    return linear(W, f"{name}.ffn2", F.gelu(linear(W, f"{name}.ffn1", x)))


def layer_norm(W, name: str, x: Tensor, eps: float) -> Tensor:
    return F.layer_norm(x, W[f"{name}.gamma"], W[f"{name}.beta"], eps)


def frequency_branch(W, name: str, cfg: ModelConfig, x: Tensor) -> Tensor:
    """DWT, residual blocks on LL and on stacked LH/HL/HH, channel reduce, upsample back."""
    sub = dwt2(x)
    parts = []
    if cfg.cdam_mode in ("full", "ll"):
        parts.append(residual_block(W, f"{name}.ll_rb", sub.ll))
    if cfg.cdam_mode in ("full", "hf"):
        parts.append(residual_block(W, f"{name}.hf_rb", concat([sub.lh, sub.hl, sub.hh], axis=0)))
    merged = parts[0] if len(parts) == 1 else concat(parts, axis=0)
    return F.bilinear_upsample2x(conv(W, f"{name}.reduce", merged))


def cdam_forward(W, cfg: ModelConfig, scale: int, feat: Tensor, state=None, trace: dict | None = None):
    """Cross-domain attention module at one scale.

    Returns ``(tokens [n, D], grid (h', w'), new_state)``.
    """
    p = f"cdam{scale}"
    st, new_state = convlstm_step(W, p, residual_block(W, f"{p}.st_rb", feat), state)
    fr = frequency_branch(W, p, cfg, feat)
    st_tok, hw = patch_embed(W, f"{p}.embed_st", cfg, scale, st)
    fr_tok, _ = patch_embed(W, f"{p}.embed_fr", cfg, scale, fr)
    att, probs = multi_head_attention(W, p, cfg, st_tok, fr_tok)
    if trace is not None:
        trace.setdefault("attention", {})[scale] = probs.data
    x = layer_norm(W, f"{p}.norm1", att + (st_tok + fr_tok), cfg.ln_eps)
    y = layer_norm(W, f"{p}.norm2", x + ffn(W, p, x), cfg.ln_eps)
    return y, hw, new_state


def aggregate_cdam(tokens: list[Tensor], hw: tuple[int, int]) -> Tensor:
    total = tokens[0]
    for t in tokens[1:]:
        total = total + t
    return tokens_to_grid(total, hw)


def wsb_forward(W, scale: int, feat: Tensor) -> Tensor:
    """Spatial residual block plus a DWT path that refines only HH."""
    p = f"wsb{scale}"
    spatial = residual_block(W, f"{p}.rb", feat)
    sub = dwt2(feat)
    freq = iwt2(SubbandSet(sub.ll, sub.lh, sub.hl, residual_block(W, f"{p}.hh_rb", sub.hh)))
    return spatial + freq


def rgd_forward(W, index: int, x: Tensor, skip: Tensor) -> Tensor:
    p = f"rgd{index}"
    y = F.bilinear_upsample2x(x + skip)
    return conv(W, f"{p}.adjust", residual_block(W, f"{p}.rb", y))
