"""Backend selection for the hot kernels.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or when the environment variable CORSEM_FORCE_PYTHON
is set to a truthy value.  Both backends implement the same function
surface with identical integer outputs and floating agreement to
round-off.
"""

from __future__ import annotations

import os

from . import pyfallback

_FORCED = os.environ.get("CORSEM_FORCE_PYTHON", "").lower() in ("1", "true", "yes")

_compiled = None
if not _FORCED:
    try:
        from . import _core as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else pyfallback

BACKEND = _impl.BACKEND

ols_columns = _impl.ols_columns
convolve_axis = _impl.convolve_axis
label_components = _impl.label_components
t_pvalues = _impl.t_pvalues
half_neighbor_offsets = pyfallback.half_neighbor_offsets


def compiled_available() -> bool:
    """True when the compiled extension importable (even if not active)."""
    if _compiled is not None:
        return True
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name=None):
    """Return a backend module by name ('compiled' or 'python'); the
    active one when name is None."""
    if name is None:
        return _impl
    if name == "python":
        return pyfallback
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
