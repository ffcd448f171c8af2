"""Kernel backend selection.

The hot per-pixel loops live in a compiled extension (``_native``, built
from Cython) with a pure-numpy fallback (``pure``).  The compiled backend
is used when importable; set CROWDVISION_PURE_KERNELS=1 to force the
fallback.  ``backend`` is the selected module; both expose the same API.
"""
from __future__ import annotations

import os

from . import pure

try:
    from . import _native as native
except ImportError:
    native = None

if native is not None and os.environ.get("CROWDVISION_PURE_KERNELS") != "1":
    backend = native
else:
    backend = pure

BACKEND_NAME: str = backend.NAME


def available_backends() -> dict[str, object]:
    out: dict[str, object] = {"pure": pure}
    if native is not None:
        out["native"] = native
    return out
