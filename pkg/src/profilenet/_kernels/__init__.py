"""Hot inner loops, compiled when available.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
pure-Python module ``_pykernels`` is used. Setting the environment variable
``PROFILENET_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels as python

try:
    if os.environ.get("PROFILENET_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

active = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

estep = active.estep
glasso_cd = active.glasso_cd
brandes = active.brandes

__all__ = ["BACKEND", "brandes", "compiled", "estep", "glasso_cd", "python"]
