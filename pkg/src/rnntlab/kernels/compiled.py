"""Tape bindings for the Cython kernels: one fused record per call.

Importing this module fails cleanly when the extension was not built; the
dispatch in ``rnntlab.kernels`` then falls back to the pure route.
"""

from __future__ import annotations

import numpy as np

from .. import _core  # noqa: F401  (ImportError here is the fallback signal)
from .. import autodiff as ad


def _t(v) -> ad.Tensor:
    return v if isinstance(v, ad.Tensor) else ad.Tensor(np.asarray(v, dtype=np.float64))


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def lstm_sequence(x, w_ih, w_hh, b, w_proj) -> ad.Tensor:
    """Same contract as `rnntlab.kernels.pure.lstm_sequence`."""
    x, w_ih, w_hh, b, w_proj = (_t(v) for v in (x, w_ih, w_hh, b, w_proj))
    din = x.shape[1]
    h4 = w_ih.shape[1]
    H = h4 // 4
    P = w_proj.shape[1]
    if w_ih.shape[0] != din or w_hh.shape != (P, h4) or b.shape != (h4,) or w_proj.shape[0] != H:
        raise ad.GradError("lstm_sequence: inconsistent weight shapes")
    xd, wihd, whhd, bd, wpd = (_c(t.data) for t in (x, w_ih, w_hh, b, w_proj))
    p, acts, c, tc, h = _core.lstm_forward(xd, wihd, whhd, bd, wpd)
    if not np.all(np.isfinite(p)):
        raise ad.GradError("lstm_sequence produced non-finite values (overflow is an error)")

    def bwd(g):
        dx, dwih, dwhh, db, dwp = _core.lstm_backward(
            _c(g), xd, wihd, whhd, wpd, p, acts, c, tc, h)
        return ((x, dx), (w_ih, dwih), (w_hh, dwhh), (b, db), (w_proj, dwp))

    return ad.record_primitive(p, (x, w_ih, w_hh, b, w_proj), bwd)


def transducer_loss(blank, label) -> ad.Tensor:
    """Same contract as `rnntlab.kernels.pure.transducer_loss`."""
    blank, label = _t(blank), _t(label)
    T, U1 = blank.shape
    if label.shape != (T, U1 - 1):
        raise ad.GradError(f"label lattice {label.shape} does not match blank {blank.shape}")
    bd, ld = _c(blank.data), _c(label.data)
    loss, alpha = _core.rnnt_forward(bd, ld)
    if not np.isfinite(loss):
        raise ad.GradError("transducer_loss produced a non-finite value")

    def bwd(g):
        dblank, dlabel = _core.rnnt_backward(alpha, bd, ld, float(g))
        return ((blank, dblank), (label, dlabel))

    return ad.record_primitive(np.asarray(loss), (blank, label), bwd)
