"""Numerical invariant checks shared by ``selftest`` and the test suite.

Each check returns a measured error; callers compare it to a tolerance.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .autodiff import functional as F
from .autodiff.gradcheck import finite_diff_check
from .autodiff.tensor import Tensor, concat, no_grad, precision
from .events import EventGroup, EventStream, encode_voxel
from .losses import LossConfig, temporal_consistency_loss, total_loss
from .model import blocks
from .model.config import ModelConfig
from .model.network import RecurrentState, model_forward
from .model.weights import ModelWeights, init_weights
from .wavelet import dwt2, energy, iwt2

# small enough that every gradient check stays well under 512 inputs
MICRO = ModelConfig(base_channels=2, bins=2, embed_dim=8, heads=2)
END_TO_END = ModelConfig(base_channels=4, bins=2, embed_dim=16, heads=2)


def wavelet_roundtrip_error(n: int = 1000, dtype=np.float32, seed: int = 0, shape=(8, 32, 32)) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x = rng.uniform(-10, 10, size=shape).astype(dtype)
        worst = max(worst, float(np.max(np.abs(iwt2(dwt2(x)).astype(np.float64) - x))))
    return worst


def wavelet_energy_error(n: int = 1000, dtype=np.float32, seed: int = 0, shape=(8, 32, 32)) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x = rng.uniform(-10, 10, size=shape).astype(dtype)
        e_in = float(np.sum(x.astype(np.float64) ** 2))
        worst = max(worst, abs(energy(dwt2(x)) - e_in) / e_in)
    return worst


def random_group(rng, bins_h: int = 16, bins_w: int = 16, max_events: int = 200) -> EventGroup:
    n = int(rng.integers(0, max_events + 1))
    t0 = float(rng.uniform(0, 1))
    dt = float(rng.uniform(1e-4, 0.1))
    t = np.sort(rng.uniform(t0, t0 + dt, size=n))
    if n:
        # hit both window edges now and then
        t[0] = t0 if rng.random() < 0.3 else t[0]
        t[-1] = t0 + dt if rng.random() < 0.3 else t[-1]
    stream = EventStream(t, rng.integers(0, bins_w, n), rng.integers(0, bins_h, n),
                         rng.choice([-1, 1], size=n), bins_h, bins_w)
    return EventGroup(stream, t0, t0 + dt, 0)


def voxel_conservation_error(n: int = 1000, bins=(2, 4, 5, 6, 8, 10), seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n):
        g = random_group(rng)
        v = encode_voxel(g, bins[i % len(bins)], 16, 16)
        worst = max(worst, abs(float(v.values.sum()) - float(g.events.p.sum())))
    return worst


def attention_row_error(cfg: ModelConfig, size=(64, 64), seed: int = 0, steps: int = 2) -> float:
    """Worst ``|row sum - 1|`` over all attention maps of a random-weight forward pass."""
    weights = init_weights(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    state, worst = RecurrentState(), 0.0
    with no_grad():
        for _ in range(steps):
            trace: dict = {}
            _, state = model_forward(weights, rng.normal(size=(cfg.bins, *size)).astype(np.float32), state, trace)
            for probs in trace["attention"].values():
                worst = max(worst, float(np.max(np.abs(probs.astype(np.float64).sum(-1) - 1.0))))
    return worst


def warp_identity_error(seed: int = 0, shape=(3, 17, 23)) -> float:
    img = np.random.default_rng(seed).normal(size=shape)
    out = F.bilinear_warp(Tensor(img, dtype=np.float64), np.zeros((2, *shape[-2:]))).data
    return float(np.max(np.abs(out - img)))


# -- gradient checks ------------------------------------------------------------------------


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def _dot(y: Tensor, r: Tensor) -> Tensor:
    return (y * r).sum()


def _micro_weights(seed: int, cfg: ModelConfig = MICRO) -> ModelWeights:
    w = init_weights(cfg, seed, dtype=np.float64)
    # nonzero biases so no unit sits exactly on an activation kink
    rng = np.random.default_rng(seed + 7)
    for name, p in w.named_parameters():
        if name.endswith(".bias") or name.endswith(".beta"):
            p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    return w


def grad_residual_block(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    x, r = rng.normal(size=(4, 6, 6)), _probe(rng, (4, 6, 6))
    return finite_diff_check(lambda t: _dot(blocks.residual_block(W, "cdam2.st_rb", t), r), Tensor(x))


def grad_convlstm(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 4, 4))
    r1, r2 = _probe(rng, (4, 4, 4)), _probe(rng, (4, 4, 4))

    def f(t):
        h, (_, c) = blocks.convlstm_step(W, "cdam2", t[0], (t[1], t[2]))
        return _dot(h, r1) + _dot(c, r2)

    return finite_diff_check(f, Tensor(x))


def grad_patch_embed(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    x = rng.normal(size=(4, 8, 8))
    r = _probe(rng, (4, MICRO.embed_dim))
    return finite_diff_check(lambda t: _dot(blocks.patch_embed(W, "cdam2.embed_st", MICRO, 2, t)[0], r), Tensor(x))


def grad_attention(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    n, d = 4, MICRO.embed_dim
    x = rng.normal(size=(2, n, d))
    r = _probe(rng, (n, d))
    return finite_diff_check(lambda t: _dot(blocks.multi_head_attention(W, "cdam2", MICRO, t[0], t[1])[0], r), Tensor(x))


def grad_ffn_layernorm(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    n, d = 4, MICRO.embed_dim
    x = rng.normal(size=(n, d))
    r = _probe(rng, (n, d))
    f = lambda t: _dot(blocks.layer_norm(W, "cdam2.norm2", t + blocks.ffn(W, "cdam2", t), MICRO.ln_eps), r)
    return finite_diff_check(f, Tensor(x))


def grad_wsb(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    x = rng.normal(size=(4, 8, 8))
    r = _probe(rng, (4, 8, 8))
    return finite_diff_check(lambda t: _dot(blocks.wsb_forward(W, 2, t), r), Tensor(x))


def grad_rgd(seed: int = 0) -> float:
    W, rng = _micro_weights(seed), np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 4, 4))
    r = _probe(rng, (2, 8, 8))
    return finite_diff_check(lambda t: _dot(blocks.rgd_forward(W, 3, t[0], t[1]), r), Tensor(x))


def grad_temporal_loss(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(2, 1, 6, 6))
    flow = rng.uniform(-1.5, 1.5, size=(2, 6, 6))
    gt_k, gt_prev = rng.uniform(0, 1, size=(2, 1, 6, 6))
    f = lambda t: temporal_consistency_loss(t[0], t[1], flow, gt_k, gt_prev, alpha=5.0)
    return finite_diff_check(f, Tensor(x))


@contextmanager
def _kink_margin(record: list):
    """Record the smallest |input| seen by any LeakyReLU while active."""
    original = F.leaky_relu

    def wrapped(x, slope=0.01):
        record.append(float(np.min(np.abs(x.data))))
        return original(x, slope)

    F.leaky_relu = wrapped
    try:
        yield
    finally:
        F.leaky_relu = original


def grad_end_to_end(seed: int = 0, h: float = 1e-3, tries: int = 500) -> float:
    """Two-step unrolled total loss of the tiny network w.r.t. the first step's
    ``[2, 16, 16]`` voxel (512 values), so the gradient runs through the
    recurrent state and the temporal term.

    Central differences are only meaningful where the loss is smooth within
    ``h``, so the input is redrawn until every LeakyReLU argument is at least
    ``h`` away from its kink.
    """
    W, rng = _micro_weights(seed, END_TO_END), np.random.default_rng(seed)
    shape = (END_TO_END.bins, 16, 16)
    second = rng.normal(size=shape)
    gts = [Tensor(rng.uniform(0, 1, size=(1, 16, 16))) for _ in range(2)]
    flows = [None, rng.uniform(-1, 1, size=(2, 16, 16))]
    cfg = LossConfig(unroll=2, l0=2)

    def f(t):
        img1, state = model_forward(W, t, RecurrentState())
        img2, _ = model_forward(W, Tensor(second), state)
        return total_loss([img1, img2], gts, flows, cfg)

    for _ in range(tries):
        x = rng.normal(size=shape)
        margins: list = []
        # only the first step's activations depend on x
        with no_grad(), _kink_margin(margins):
            model_forward(W, Tensor(x), RecurrentState())
        if min(margins) >= h:
            return finite_diff_check(f, Tensor(x), h)
    raise RuntimeError(f"no kink-free input found in {tries} draws")


GRADIENT_CHECKS = {
    "residual_block": grad_residual_block,
    "convlstm_step": grad_convlstm,
    "patch_embed": grad_patch_embed,
    "attention": grad_attention,
    "ffn_layernorm": grad_ffn_layernorm,
    "wsb": grad_wsb,
    "rgd": grad_rgd,
    "temporal_loss": grad_temporal_loss,
    "end_to_end": grad_end_to_end,
}


def gradient_errors(seed: int = 0, names=None) -> dict:
    with precision("f64"):
        return {n: GRADIENT_CHECKS[n](seed) for n in (names or GRADIENT_CHECKS)}
