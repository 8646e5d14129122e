from __future__ import annotations

import numpy as np

from .tensor import Tensor, precision


def finite_diff_check(f, x: Tensor, h: float = 1e-3) -> float:
    """Max relative error between tape and central-difference gradients of ``f`` at ``x``.

    Runs in double precision. ``f`` must map a Tensor to a scalar Tensor and
    must close over float64 parameters for the check to be meaningful.
    """
    with precision(np.float64):
        xt = Tensor(x.data, requires_grad=True, dtype=np.float64)
        out = f(xt)
        if out.requires_grad:
            out.backward()
        analytic = np.zeros(xt.shape) if xt.grad is None else xt.grad.astype(np.float64)

        base = x.data.astype(np.float64)
        numeric = np.zeros(base.size)
        flat = base.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f(Tensor(base, dtype=np.float64)).item()
            flat[i] = old - h
            fm = f(Tensor(base, dtype=np.float64)).item()
            flat[i] = old
            numeric[i] = (fp - fm) / (2.0 * h)

    a = analytic.reshape(-1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
