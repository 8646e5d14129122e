"""Single-level orthonormal 2-D Haar transform on ``[..., H, W]`` maps.

Filters (applied as stride-2 correlations on 2x2 blocks ``[[a, b], [c, d]]``)::

    LL = ( a + b + c + d) / 2      LH = (-a - b + c + d) / 2
    HL = (-a + b - c + d) / 2      HH = ( a - b - c + d) / 2

Accepts numpy arrays or autodiff Tensors; Tensors stay on the tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.functional import ShapeError
from .autodiff.tensor import Tensor, _result


@dataclass
class SubbandSet:
    ll: object
    lh: object
    hl: object
    hh: object

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self):
        return self.ll.shape


def _analysis(x: np.ndarray):
    # accumulate in double, round once to the input precision
    dt = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    x = x.astype(np.float64, copy=False)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return (
        (0.5 * (a + b + c + d)).astype(dt),
        (0.5 * (-a - b + c + d)).astype(dt),
        (0.5 * (-a + b - c + d)).astype(dt),
        (0.5 * (a - b - c + d)).astype(dt),
    )


def _synthesis(ll, lh, hl, hh) -> np.ndarray:
    dt = np.result_type(ll, lh, hl, hh)
    if not np.issubdtype(dt, np.floating):
        dt = np.float64
    ll, lh, hl, hh = (np.asarray(b, dtype=np.float64) for b in (ll, lh, hl, hh))
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]), dtype=dt)
    out[..., 0::2, 0::2] = 0.5 * (ll - lh - hl + hh)
    out[..., 0::2, 1::2] = 0.5 * (ll - lh + hl - hh)
    out[..., 1::2, 0::2] = 0.5 * (ll + lh - hl - hh)
    out[..., 1::2, 1::2] = 0.5 * (ll + lh + hl + hh)
    return out


def dwt2(x) -> SubbandSet:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2 needs even spatial dims, got {h}x{w}")
    if not isinstance(x, Tensor):
        return SubbandSet(*_analysis(np.asarray(x)))

    bands = _analysis(x.data)
    zero = np.zeros_like(bands[0])
    out = []
    for k, band in enumerate(bands):
        # the adjoint of one analysis filter is synthesis with only that band set
        def bw(g, k=k):
            args = [zero] * 4
            args[k] = g
            return (_synthesis(*args),)

        out.append(_result(np.ascontiguousarray(band), (x,), bw))
    return SubbandSet(*out)


def iwt2(s: SubbandSet):
    shapes = {tuple(b.shape) for b in s}
    if len(shapes) != 1:
        raise ShapeError(f"subband shapes differ: {sorted(shapes)}")
    bands = tuple(s)
    if not any(isinstance(b, Tensor) for b in bands):
        return _synthesis(*(np.asarray(b) for b in bands))

    from .autodiff.tensor import as_tensor

    bands = tuple(as_tensor(b) for b in bands)
    out = _synthesis(*(b.data for b in bands))
    return _result(out, bands, lambda g: _analysis(g))


def energy(x) -> float:
    """Sum of squares; for a SubbandSet, summed over all four bands."""
    if isinstance(x, SubbandSet):
        return sum(energy(b) for b in x)
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    return float(np.sum(a.astype(np.float64) ** 2))
