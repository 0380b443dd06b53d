"""Kernel lane selection.

The compiled Cython core is preferred; a result-identical numpy fallback is
used when the extension is missing or FRACVAR_PURE_PYTHON is set to a
non-empty value.  ``BACKEND`` reports which lane is active.
"""

import os

if os.environ.get("FRACVAR_PURE_PYTHON"):
    from . import _fallback as impl
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as impl

BACKEND = impl.BACKEND
atom_potential_sum = impl.atom_potential_sum
direct_vector_sum = impl.direct_vector_sum
exhaustive_binary_min = impl.exhaustive_binary_min
min_atom_distance = impl.min_atom_distance

__all__ = [
    "BACKEND",
    "atom_potential_sum",
    "direct_vector_sum",
    "exhaustive_binary_min",
    "min_atom_distance",
]
