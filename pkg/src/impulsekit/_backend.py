"""Select the stepping kernel at import.

``IMPULSEKIT_BACKEND=python`` forces the pure-Python kernel,
``IMPULSEKIT_BACKEND=cython`` makes a missing extension an ImportError;
the default uses the extension when it was built.
"""
import os

from . import _fallback

_requested = os.environ.get("IMPULSEKIT_BACKEND", "auto").lower()

if _requested == "python":
    advance = _fallback.advance
    BACKEND = "python"
else:
    try:
        from ._kernels import advance
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        advance = _fallback.advance
        BACKEND = "python"
