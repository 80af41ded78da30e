"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``LUCKCHAIN_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
persistence_counts = _fallback.persistence_counts

if not os.environ.get("LUCKCHAIN_PURE"):
    try:
        from ._ckernels import persistence_counts  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "persistence_counts"]
