"""Training losses and full-reference image metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import functional as F
from .autodiff.tensor import Tensor, as_tensor, no_grad, precision


@dataclass(frozen=True)
class LossConfig:
    lambda_tc: float = 5.0
    alpha: float = 50.0
    unroll: int = 40
    l0: int = 2
    distance: str = "l1ssim"
    # "pixel": per-pixel occlusion map; "scalar": one weight from the whole-image squared norm
    occlusion: str = "pixel"

    def __post_init__(self):
        if self.lambda_tc < 0:
            raise ValueError("lambda_tc must be non-negative")
        if not 1 <= self.l0 <= self.unroll:
            raise ValueError(f"need 1 <= l0 <= unroll, got l0={self.l0}, unroll={self.unroll}")
        if self.occlusion not in ("pixel", "scalar"):
            raise ValueError(f"occlusion must be 'pixel' or 'scalar', got {self.occlusion!r}")


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- SSIM -------------------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _window_size(h: int, w: int, size: int) -> int:
    size = min(size, h, w)
    return size if size % 2 else size - 1


def ssim_tensor(a: Tensor, b: Tensor, size: int = 11, sigma: float = 1.5,
                k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> Tensor:
    """Mean single-scale SSIM over valid window positions, differentiable in both inputs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    c, h, w = a.shape
    win = Tensor(gaussian_window(_window_size(h, w, size), sigma)[None, None], dtype=a.dtype)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    vals = []
    for ch in range(c):
        x, y = a[ch : ch + 1], b[ch : ch + 1]
        mx, my = F.conv2d(x, win), F.conv2d(y, win)
        sxx = F.conv2d(x * x, win) - mx * mx
        syy = F.conv2d(y * y, win) - my * my
        sxy = F.conv2d(x * y, win) - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append((num / den).mean())
    total = vals[0]
    for v in vals[1:]:
        total = total + v
    return total * (1.0 / c)


def ssim(pred, target, **kw) -> float:
    """SSIM of two images ``[C,H,W]`` (or ``[H,W]``), 11x11 Gaussian window, sigma 1.5."""
    p, t = _arr(pred).astype(np.float64), _arr(target).astype(np.float64)
    if p.ndim == 2:
        p, t = p[None], t[None]
    with no_grad(), precision(np.float64):
        return ssim_tensor(Tensor(p), Tensor(t), **kw).item()


def psnr(pred, target, peak: float = 1.0) -> float:
    p, t = _arr(pred).astype(np.float64), _arr(target).astype(np.float64)
    if p.shape != t.shape:
        raise ValueError(f"psnr shape mismatch {p.shape} vs {t.shape}")
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


# -- reconstruction distance ----------------------------------------------------------

def _l1ssim(pred: Tensor, target: Tensor) -> Tensor:
    return 0.5 * (pred - target).abs().mean() + 0.5 * (1.0 - ssim_tensor(pred, target))


def _l1(pred: Tensor, target: Tensor) -> Tensor:
    return (pred - target).abs().mean()


DISTANCES = {"l1ssim": _l1ssim, "l1": _l1}


def register_distance(name: str, fn) -> None:
    """Plug in another image distance ``fn(pred, target) -> scalar Tensor``."""
    DISTANCES[name] = fn


def reconstruction_distance(pred, target, kind: str = "l1ssim") -> Tensor:
    try:
        fn = DISTANCES[kind]
    except KeyError:
        raise ValueError(f"unknown reconstruction distance {kind!r}; known: {sorted(DISTANCES)}") from None
    pred = as_tensor(pred)
    return fn(pred, as_tensor(target, pred.dtype))


# -- temporal consistency ----------------------------------------------------------------

def occlusion_weight(gt_k, gt_prev_warped, alpha: float = 50.0, mode: str = "pixel") -> np.ndarray:
    """``exp(-alpha * (I_k - warp(I_{k-1}))**2)`` per pixel, or one scalar weight."""
    d = _arr(gt_k).astype(np.float64) - _arr(gt_prev_warped).astype(np.float64)
    if mode == "scalar":
        return np.full(d.shape, math.exp(-alpha * float(np.sum(d * d))))
    return np.exp(-alpha * d * d)


def temporal_consistency_loss(rec_k: Tensor, rec_prev: Tensor, flow, gt_k, gt_prev,
                              alpha: float = 50.0, mode: str = "pixel") -> Tensor:
    """Occlusion-weighted mean absolute warping error between consecutive reconstructions."""
    rec_k = as_tensor(rec_k)
    rec_prev = as_tensor(rec_prev, rec_k.dtype)
    if rec_k.shape != rec_prev.shape or rec_k.shape != np.shape(_arr(gt_k)):
        raise ValueError("temporal loss inputs must share one shape")
    flow = _arr(flow)
    with no_grad():
        gt_warped = F.bilinear_warp(Tensor(_arr(gt_prev), dtype=np.float64), flow).data
    m = occlusion_weight(gt_k, gt_warped, alpha, mode).astype(rec_k.dtype)
    warped = F.bilinear_warp(rec_prev, flow)
    return (Tensor(m, dtype=rec_k.dtype) * (rec_k - warped).abs()).mean()


def total_loss(recon_seq, gt_seq, flow_seq, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum of per-step reconstruction distances plus ``lambda_tc`` times the
    temporal terms for steps ``l0..L`` (1-based).

    ``flow_seq[k]`` maps frame ``k-1`` onto frame ``k``; ``flow_seq[0]`` is unused.
    """
    n = len(recon_seq)
    if len(gt_seq) != n:
        raise ValueError(f"{n} reconstructions but {len(gt_seq)} ground-truth frames")
    loss = reconstruction_distance(recon_seq[0], gt_seq[0], cfg.distance)
    for k in range(1, n):
        loss = loss + reconstruction_distance(recon_seq[k], gt_seq[k], cfg.distance)
    if cfg.lambda_tc > 0:
        for k in range(max(cfg.l0, 2), n + 1):
            i = k - 1
            tc = temporal_consistency_loss(
                recon_seq[i], recon_seq[i - 1], flow_seq[i], gt_seq[i], gt_seq[i - 1], cfg.alpha, cfg.occlusion
            )
            loss = loss + cfg.lambda_tc * tc
    return loss
