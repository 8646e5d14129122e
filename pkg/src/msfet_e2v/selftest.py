"""Quick invariant suite behind ``msfet-e2v selftest``."""
from __future__ import annotations

import numpy as np

from . import checks
from .autodiff import functional as F
from .model.config import ModelConfig

_SMALL = ModelConfig(base_channels=4, embed_dim=16, heads=2)

# name -> (measure, tolerance); measures are sized to finish in seconds
PROPERTIES = {
    "wavelet_roundtrip_f32": (lambda: checks.wavelet_roundtrip_error(100, np.float32), 1e-6),
    "wavelet_roundtrip_f64": (lambda: checks.wavelet_roundtrip_error(100, np.float64), 1e-12),
    "wavelet_energy": (lambda: checks.wavelet_energy_error(100, np.float32), 1e-6),
    "voxel_conservation": (lambda: checks.voxel_conservation_error(200), 1e-9),
    "softmax_rows": (lambda: checks.attention_row_error(_SMALL, (32, 32)), 1e-6),
    "warp_identity": (checks.warp_identity_error, 1e-12),
    "grad_residual_block": (lambda: _grad("residual_block"), 1e-3),
    "grad_convlstm_step": (lambda: _grad("convlstm_step"), 1e-3),
    "grad_attention": (lambda: _grad("attention"), 1e-3),
    "grad_ffn_layernorm": (lambda: _grad("ffn_layernorm"), 1e-3),
    "grad_temporal_loss": (lambda: _grad("temporal_loss"), 1e-3),
}


def _grad(name: str) -> float:
    return checks.gradient_errors(0, [name])[name]


def _faulty_softmax(x, axis=-1):
    # test hook: rows sum to 1.01
    return _good_softmax(x, axis) * 1.01


_good_softmax = F.softmax


def run(inject_fault: str | None = None, out=print) -> bool:
    """Run every property, print one line each, return True iff all pass.

    ``inject_fault`` names a property whose measured error is forced over
    tolerance; ``softmax`` instead corrupts the softmax op itself.
    """
    if inject_fault and inject_fault not in PROPERTIES and inject_fault != "softmax":
        raise ValueError(f"unknown fault {inject_fault!r}; choose from {sorted(PROPERTIES)} or 'softmax'")
    ok = True
    if inject_fault == "softmax":
        F.softmax = _faulty_softmax
    try:
        for name, (measure, tol) in PROPERTIES.items():
            try:
                err = float(measure())
            except Exception as exc:  # a crash counts as a failure, not an abort
                out(f"FAIL {name}: {type(exc).__name__}: {exc}")
                ok = False
                continue
            if name == inject_fault:
                err += 10 * tol
            passed = bool(np.isfinite(err) and err <= tol)
            ok &= passed
            out(f"{'PASS' if passed else 'FAIL'} {name}: error {err:.3e} (tol {tol:.0e})")
    finally:
        F.softmax = _good_softmax
    out(f"{'ALL PASS' if ok else 'SOME FAILED'}")
    return ok
