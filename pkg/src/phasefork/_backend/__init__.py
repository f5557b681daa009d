"""Numeric backend selection.

The compiled extension (_core) and the reference module (pyref) implement the
same kernels with bit-identical arithmetic.  The compiled one is preferred
when importable; PHASEFORK_BACKEND=pure forces the reference backend and
PHASEFORK_BACKEND=compiled makes a missing extension a hard error.
"""

from __future__ import annotations

import os

from . import pyref

_choice = os.environ.get("PHASEFORK_BACKEND", "auto").strip().lower()

# no sentinel assignment before the import: a pre-existing attribute would
# make `from . import _core` bind it without importing the extension
try:
    from . import _core

    have_compiled = True
except ImportError:
    _core = None
    have_compiled = False

if _choice in ("auto", ""):
    active = _core if have_compiled else pyref
elif _choice in ("compiled", "c", "ext"):
    if not have_compiled:
        raise ImportError(
            "PHASEFORK_BACKEND=compiled but the phasefork._backend._core "
            "extension is not importable; reinstall with a C toolchain"
        )
    active = _core
elif _choice in ("pure", "python", "pyref"):
    active = pyref
else:
    raise ValueError(
        "PHASEFORK_BACKEND must be auto, compiled, or pure (got %r)" % _choice
    )


def backend_name() -> str:
    return active.backend_name()


def backends_available():
    """All importable backends, reference first.  Used by equivalence tests."""
    out = [pyref]
    if have_compiled:
        out.append(_core)
    return out
