"""Backend selection for the closed-loop kernel.

The compiled extension is used when it was built; otherwise the pure-Python
twin. Setting ``BETACTL_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _loop_py

try:
    from . import _loop as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("BETACTL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    run_loop = _compiled.run_loop
    BACKEND = "cython"
else:
    run_loop = _loop_py.run_loop
    BACKEND = "python"

python_run_loop = _loop_py.run_loop
compiled_run_loop = _compiled.run_loop if _compiled is not None else None
