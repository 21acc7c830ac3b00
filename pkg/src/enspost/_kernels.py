"""Select the compiled tree kernels when available.

Set ``ENSPOST_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _tree_py

BACKEND = "python"
build_tree = _tree_py.build_tree
apply_forest = _tree_py.apply_forest
presort = _tree_py.presort

if os.environ.get("ENSPOST_PURE_PYTHON") != "1":
    try:
        from . import _tree  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        build_tree = _tree.build_tree
        apply_forest = _tree.apply_forest
        presort = _tree.presort
        BACKEND = "compiled"
