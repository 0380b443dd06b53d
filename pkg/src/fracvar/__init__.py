"""fracvar: a desk-scale laboratory for Riesz fractional gradients,
fractional variations of label fields, and anisotropic minimal-partition
energies, with verified identities and nonlocal-to-local limit experiments.
"""

from ._kernels import BACKEND as kernel_backend

__all__ = ["kernel_backend"]
__version__ = "0.1.0"
