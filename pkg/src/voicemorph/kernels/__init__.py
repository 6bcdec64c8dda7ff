"""Backend selection for the convolution kernels.

The compiled Cython extension is preferred when present; otherwise the
pure-numpy reference is used.  Set ``VOICEMORPH_BACKEND=python`` or
``=compiled`` to force a choice (forcing an unavailable backend raises).
Both backends produce bit-identical results; they differ only in speed.
"""

import os

from ..errors import ConfigError
from . import _reference

_BACKENDS = {"python": _reference}

try:
    from . import _convcore

    _BACKENDS["compiled"] = _convcore
except ImportError:
    _convcore = None


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    if name not in _BACKENDS:
        raise ConfigError(
            f"kernel backend {name!r} not available; built: {available_backends()}"
        )
    return _BACKENDS[name]


def use_backend(name):
    """Rebind the active kernels (used by the benchmark and tests)."""
    global im2col, col2im, BACKEND
    backend = get_backend(name)
    im2col, col2im = backend.im2col, backend.col2im
    BACKEND = name
    return backend


_forced = os.environ.get("VOICEMORPH_BACKEND", "").strip().lower()
if _forced:
    _active = get_backend(_forced)
    BACKEND = _forced
else:
    BACKEND = "compiled" if _convcore is not None else "python"
    _active = _BACKENDS[BACKEND]

im2col = _active.im2col
col2im = _active.col2im
out_size = _reference.out_size
