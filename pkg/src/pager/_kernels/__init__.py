"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; set ``PAGER_BACKEND=python``
to force the fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("PAGER_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

if compiled_backend is not None:
    BACKEND = "cython"
    canny_edges = compiled_backend.canny_edges
    diag_gauss_scores = compiled_backend.diag_gauss_scores
else:
    BACKEND = "python"
    canny_edges = python_backend.canny_edges
    diag_gauss_scores = python_backend.diag_gauss_scores

__all__ = ["BACKEND", "canny_edges", "diag_gauss_scores", "python_backend", "compiled_backend"]
