"""Select the LAD kernel: compiled extension if importable, numpy otherwise.

Set ``L1NS_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("L1NS_PURE_PYTHON", "") not in ("", "0"):
    from ._lad_py import lad_solve_batch

    BACKEND = "python"
else:
    try:
        from ._lad import lad_solve_batch
    except ImportError:  # extension not built
        logger.debug("compiled LAD kernel unavailable, using numpy fallback")
        from ._lad_py import lad_solve_batch

        BACKEND = "python"
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "lad_solve_batch"]
