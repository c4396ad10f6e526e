"""Backend selection for the hot loops.

The compiled extension is used when it was built; set ``AMPUD_PURE_PYTHON=1``
to force the numpy fallback.  ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("AMPUD_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

init_scan = _impl.init_scan
em_sweeps = _impl.em_sweeps
gm_denoise = _impl.gm_denoise
gm_logpdf = _impl.gm_logpdf


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
