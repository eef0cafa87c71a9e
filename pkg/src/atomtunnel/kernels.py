"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``ATOMTUNNEL_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""
import os

from . import _pykernels as python_backend

try:
    if os.environ.get("ATOMTUNNEL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

backend = compiled_backend or python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

transfer_matrices = backend.transfer_matrices
numerov_shoot = backend.numerov_shoot
