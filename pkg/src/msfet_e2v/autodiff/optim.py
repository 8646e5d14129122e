from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction. Parameters are updated in place."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def state_arrays(self) -> dict:
        out = {"optim.t": np.array([self.t], dtype=np.float32)}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"optim.m.{p.name}"] = m
            out[f"optim.v.{p.name}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        if "optim.t" not in arrays:
            return
        self.t = int(arrays["optim.t"][0])
        for i, p in enumerate(self.params):
            if f"optim.m.{p.name}" in arrays:
                self.m[i] = arrays[f"optim.m.{p.name}"].astype(p.data.dtype).reshape(p.shape)
                self.v[i] = arrays[f"optim.v.{p.name}"].astype(p.data.dtype).reshape(p.shape)


def adam_step(params, lr: float, state: Adam | None = None, betas=(0.9, 0.999), eps: float = 1e-8) -> Adam:
    """Apply one Adam update using each parameter's ``.grad``; returns the optimizer state."""
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.lr = lr
    state.step()
    return state
