"""Backend selection for the tree kernels.

The compiled extension is used when it imports cleanly; otherwise, or when
``STREAMLEAK_PURE_PYTHON=1`` is set, the numpy twin is used. ``BACKEND``
names the active one.
"""
import os

from . import _kernels_py

if os.environ.get("STREAMLEAK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

build_classifier_tree = _impl.build_classifier_tree
build_gradient_tree = _impl.build_gradient_tree
apply_tree = _impl.apply_tree


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
