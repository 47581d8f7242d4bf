"""Select the compiled kernels when available, else the numpy fallback.

Set ``ORDERNET_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("ORDERNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

held_karp = _impl.held_karp
matching = _impl.matching
closed_tour_length = _impl.closed_tour_length
relu_bn_forward = _impl.relu_bn_forward
relu_bn_backward = _impl.relu_bn_backward

__all__ = ["BACKEND", "held_karp", "matching", "closed_tour_length", "relu_bn_forward", "relu_bn_backward"]
