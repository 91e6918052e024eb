"""Backend dispatch for the training hot loops.

Two interchangeable routes exist for ``lstm_sequence`` and
``transducer_loss``: a pure route composed from tape primitives and a
compiled route that records one fused tape node per call. Selection order:

* ``RNNTLAB_BACKEND=pure`` or ``compiled`` forces a route (``compiled``
  raises if the extension is missing),
* ``auto`` (default) prefers compiled and falls back to pure.

``use_backend`` switches at runtime; the benchmark uses it to time both
routes in one process.
"""

from __future__ import annotations

import os

from . import pure

_impl = pure
_name = "pure"


def use_backend(name: str) -> str:
    """Select 'pure', 'compiled', or 'auto'. Returns the route now active."""
    global _impl, _name
    if name == "pure":
        _impl, _name = pure, "pure"
    elif name == "compiled":
        from . import compiled
        _impl, _name = compiled, "compiled"
    elif name == "auto":
        try:
            from . import compiled
            _impl, _name = compiled, "compiled"
        except ImportError:
            _impl, _name = pure, "pure"
    else:
        raise ValueError(f"unknown backend {name!r} (use pure, compiled, or auto)")
    return _name


def backend_name() -> str:
    return _name


def compiled_available() -> bool:
    try:
        from . import compiled  # noqa: F401
    except ImportError:
        return False
    return True


def lstm_sequence(x, w_ih, w_hh, b, w_proj):
    return _impl.lstm_sequence(x, w_ih, w_hh, b, w_proj)


def transducer_loss(blank, label):
    return _impl.transducer_loss(blank, label)


use_backend(os.environ.get("RNNTLAB_BACKEND", "auto").strip().lower())
