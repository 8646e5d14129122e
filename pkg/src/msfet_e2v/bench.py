"""Forward-pass throughput and per-block timing."""
from __future__ import annotations

import time

import numpy as np

from .autodiff.tensor import no_grad
from .model.network import RecurrentState, model_forward
from .model.weights import ModelWeights

REFERENCE_PARAMS = 16.71e6


def bench_resolution(weights: ModelWeights, size: int, repeats: int = 3, seed: int = 0) -> dict:
    """Average wall time of one recurrent step at ``size`` x ``size`` plus per-block means."""
    rng = np.random.default_rng(seed)
    cfg = weights.config
    dtype = weights["head.weight"].dtype
    vox = rng.normal(size=(cfg.bins, size, size)).astype(dtype)
    state = RecurrentState()
    with no_grad():
        model_forward(weights, vox, state)  # warm-up
        trace: dict = {}
        t0 = time.perf_counter()
        for _ in range(repeats):
            _, state = model_forward(weights, vox, state, trace)
        total = (time.perf_counter() - t0) / repeats
    blocks = {k: v / repeats for k, v in trace["time"].items()}
    return {"size": size, "seconds": total, "fps": 1.0 / total, "blocks": blocks}


def format_report(weights: ModelWeights, results: list[dict]) -> str:
    n = weights.count()
    lines = [f"parameters: {n:,} ({n / 1e6:.2f}M; reference magnitude {REFERENCE_PARAMS / 1e6:.2f}M)"]
    for r in results:
        lines.append(f"{r['size']}x{r['size']}: {r['seconds'] * 1000:.1f} ms/frame, {r['fps']:.2f} frames/s")
        for k, v in r["blocks"].items():
            lines.append(f"  {k:<10s} {v * 1000:8.2f} ms")
    return "\n".join(lines)
