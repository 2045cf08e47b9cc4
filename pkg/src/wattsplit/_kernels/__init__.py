"""Hot numeric kernels with a compiled core and a NumPy fallback.

The compiled extension (``_ck``, Cython) is preferred when it imported
cleanly; otherwise the NumPy module (``_pyk``) serves the same functions.
Set ``WATTSPLIT_KERNELS=python`` or ``=compiled`` to force a backend;
forcing ``compiled`` raises if the extension is missing.
"""

from __future__ import annotations

import os

from . import _pyk


def _select():
    choice = os.environ.get("WATTSPLIT_KERNELS", "auto").strip().lower()
    if choice not in ("auto", "python", "compiled"):
        raise ValueError(f"WATTSPLIT_KERNELS must be auto|python|compiled, got {choice!r}")
    if choice == "python":
        return _pyk
    try:
        from . import _ck
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "compiled kernels requested via WATTSPLIT_KERNELS but the "
                "extension is not built; run `python setup.py build_ext --inplace`"
            ) from None
        return _pyk
    return _ck


_impl = _select()

BACKEND = _impl.NAME
co_assign = _impl.co_assign
viterbi_path = _impl.viterbi_path
best_split = _impl.best_split

__all__ = ["BACKEND", "co_assign", "viterbi_path", "best_split"]
