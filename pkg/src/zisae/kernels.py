"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when the environment variable ``ZISAE_PURE_PYTHON=1`` is set, the numpy
implementations in ``_pykernels`` are used. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels

_compiled = None
if os.environ.get("ZISAE_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _pykernels


def available_backends():
    return ("cython", "python") if _compiled is not None else ("python",)


def get_backend(name):
    if name == "python":
        return _pykernels
    if name == "cython" and _compiled is not None:
        return _compiled
    raise ValueError(f"kernel backend {name!r} is not available")


group_stats = _active.group_stats
laplace_logit = _active.laplace_logit
zi_area_means = _active.zi_area_means
