"""Subspace-configurable networks (SCNs).

Inference weights for a transformation parameter alpha are a convex
combination of D base models, with coefficients produced by a small
configuration network from an encoding of alpha.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
