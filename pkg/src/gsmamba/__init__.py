"""Gather-scatter Mamba video super-resolution, desk scale, in numpy.

Hot loops (selective scan, bilinear warp) run as numba kernels; set
``GSMAMBA_BACKEND=numpy`` to use the pure-numpy fallbacks instead.
"""

from .kernels import BACKEND, HAS_NUMBA
from .model import GSMambaVSR, ModelConfig

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAS_NUMBA", "GSMambaVSR", "ModelConfig", "__version__"]
