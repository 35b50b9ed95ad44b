"""Backend selection for the fused row kernels.

The compiled extension ``galileo._ckernels`` is used when it imports;
otherwise (or with ``GALILEO_PURE_PYTHON=1``) the numpy twins from
``_pykernels`` are used. ``set_backend`` switches at runtime, which the
benchmark and the backend-equivalence tests rely on.
"""

import os
from contextlib import contextmanager

from galileo.numerics import _pykernels

try:
    from galileo import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("layer_norm_fwd", "layer_norm_bwd", "gelu_fwd", "gelu_bwd",
          "softmax_fwd", "softmax_bwd", "knn_vote")

BACKEND = None


def available_backends():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def set_backend(name):
    """Point the module-level kernel functions at ``name``'s implementation."""
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("galileo._ckernels is not built")
        src = _ckernels
    elif name == "python":
        src = _pykernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(src, fn)
    BACKEND = name


@contextmanager
def using_backend(name):
    prev = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


if _ckernels is not None and os.environ.get("GALILEO_PURE_PYTHON", "") not in ("1", "true"):
    set_backend("compiled")
else:
    set_backend("python")
