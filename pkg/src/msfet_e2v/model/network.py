from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import functional as F
from ..autodiff.tensor import Tensor
from ..events import VoxelGrid
from . import blocks
from .config import ConfigError
from .weights import ModelWeights


@dataclass
class RecurrentState:
    """Per-scale ConvLSTM (hidden, cell) pairs; empty until the first step."""

    cells: dict = field(default_factory=dict)

    def get(self, scale: int):
        return self.cells.get(scale)

    def reset(self) -> None:
        self.cells.clear()

    def detach(self) -> "RecurrentState":
        return RecurrentState({j: (h.detach(), c.detach()) for j, (h, c) in self.cells.items()})


@contextmanager
def _timed(trace, key):
    if trace is None:
        yield
        return
    t0 = time.perf_counter()
    yield
    times = trace.setdefault("time", {})
    times[key] = times.get(key, 0.0) + time.perf_counter() - t0


class MSFETE2V:
    """Recurrent event-to-image network. Call once per voxel grid, in order."""

    def __init__(self, weights: ModelWeights):
        self.weights = weights
        self.config = weights.config
        self.state = RecurrentState()

    def reset_state(self) -> None:
        self.state = RecurrentState()

    def __call__(self, voxel, trace: dict | None = None) -> Tensor:
        return self.forward(voxel, trace)

    def forward(self, voxel, trace: dict | None = None) -> Tensor:
        image, self.state = model_forward(self.weights, voxel, self.state, trace)
        return image


def _as_input(voxel, dtype) -> Tensor:
    if isinstance(voxel, Tensor):
        return voxel
    if isinstance(voxel, VoxelGrid):
        voxel = voxel.values
    return Tensor(np.asarray(voxel), dtype=dtype)


def model_forward(weights: ModelWeights, voxel, state: RecurrentState | None = None, trace: dict | None = None):
    """One reconstruction step: ``[B, H, W]`` voxel -> ``[1, H, W]`` image and the next state."""
    cfg = weights.config
    W = weights
    x = _as_input(voxel, W["head.weight"].dtype)
    if x.ndim != 3 or x.shape[0] != cfg.bins:
        raise ConfigError(f"voxel shape {x.shape} does not match configured bins={cfg.bins}")
    state = state if state is not None else RecurrentState()
    _, h, w = x.shape
    m = cfg.pad_multiple
    x = F.pad_reflect(x, (-h) % m, (-w) % m)

    with _timed(trace, "head"):
        x = blocks.head_forward(W, x)
    with _timed(trace, "downconv"):
        feats = blocks.downconv_forward(W, cfg, x)

    tokens, new_cells, hw = [], {}, None
    for j, f in zip(cfg.scales, feats):
        with _timed(trace, f"cdam{j}"):
            tok, hw, new_cells[j] = blocks.cdam_forward(W, cfg, j, f, state.get(j), trace)
        tokens.append(tok)
    with _timed(trace, "aggregate"):
        z = blocks.aggregate_cdam(tokens, hw)
        if "zproj.weight" in W:
            z = blocks.conv(W, "zproj", z)

    y = z
    for i, (j, f) in enumerate(zip(reversed(cfg.scales), reversed(feats)), start=1):
        with _timed(trace, f"wsb{j}"):
            skip = blocks.wsb_forward(W, j, f)
        with _timed(trace, f"rgd{i}"):
            y = blocks.rgd_forward(W, i, y, skip)

    with _timed(trace, "pred"):
        out = blocks.conv(W, "pred", y)
    if out.shape[1:] != (h, w):
        out = out[:, :h, :w]
    return out, RecurrentState(new_cells)
