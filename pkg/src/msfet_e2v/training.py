"""Unrolled-sequence toy training and sequential reconstruction."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff.optim import Adam
from .autodiff.tensor import Tensor, no_grad
from .events import EventStream, encode_voxel, group_by_frames
from .losses import LossConfig, ssim, total_loss
from .model.network import RecurrentState, model_forward
from .model.weights import ModelWeights

log = logging.getLogger(__name__)


@dataclass
class TrainingData:
    voxels: list  # [B, H, W] per group
    frames: list  # ground truth at each group's end, [1, H, W]
    flows: list  # flows[k] maps frames[k-1] onto frames[k]; flows[0] unused


def training_data(events: EventStream, frame_times, frames, flows, bins: int) -> TrainingData:
    """Group events between frames; group k pairs with frame k+1 and flow k."""
    h, w = np.shape(frames[0])[-2:]
    groups = group_by_frames(events, frame_times)
    voxels = [encode_voxel(g, bins, h, w).values for g in groups]
    return TrainingData(voxels, list(frames[1:]), [None] + list(flows[1:]))


def window_starts(n: int, unroll: int) -> list[int]:
    if n < unroll:
        raise ValueError(f"sequence has {n} steps, fewer than the unroll length {unroll}")
    return list(range(n - unroll + 1))


def unrolled_loss(weights: ModelWeights, data: TrainingData, start: int, unroll: int, loss_cfg: LossConfig) -> Tensor:
    dtype = weights["head.weight"].dtype
    state = RecurrentState()
    recons = []
    for k in range(start, start + unroll):
        img, state = model_forward(weights, Tensor(data.voxels[k], dtype=dtype), state)
        recons.append(img)
    gts = [Tensor(f, dtype=dtype) for f in data.frames[start : start + unroll]]
    flows = [None] + data.flows[start + 1 : start + unroll]
    return total_loss(recons, gts, flows, loss_cfg)


def train(weights: ModelWeights, data: TrainingData, steps: int, lr: float = 1e-4, unroll: int = 8,
          loss_cfg: LossConfig | None = None, optimizer: Adam | None = None, on_step=None) -> tuple[list, Adam]:
    """Adam on the unrolled total loss; windows cycle over every valid start."""
    loss_cfg = loss_cfg or LossConfig(unroll=unroll)
    opt = optimizer or Adam(weights.parameters(), lr=lr)
    opt.lr = lr
    starts = window_starts(len(data.voxels), unroll)
    losses = []
    for step in range(steps):
        start = starts[(opt.t) % len(starts)]
        opt.zero_grad()
        loss = unrolled_loss(weights, data, start, unroll, loss_cfg)
        loss.backward()
        opt.step()
        value = loss.item()
        losses.append(value)
        if on_step is not None:
            on_step(opt.t, value)
        log.debug("step %d loss %.6f", opt.t, value)
    return losses, opt


def reconstruct(weights: ModelWeights, voxels, state: RecurrentState | None = None, trace: dict | None = None):
    """Run the model over voxel grids in order, carrying recurrent state; returns float images."""
    dtype = weights["head.weight"].dtype
    state = state or RecurrentState()
    out = []
    with no_grad():
        for v in voxels:
            img, state = model_forward(weights, Tensor(np.asarray(v), dtype=dtype), state, trace)
            out.append(img.data.astype(np.float64))
    return out, state


def mean_ssim(recons, frames) -> float:
    return float(np.mean([ssim(np.clip(r, 0.0, 1.0), f) for r, f in zip(recons, frames)]))
