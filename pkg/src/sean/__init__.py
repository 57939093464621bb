"""Semantic region-adaptive normalization (SEAN) for per-region style control in mask-conditioned image synthesis."""

from .tensor import Parameter, ShapeError, Tensor, no_grad
from .regions import StyleMatrix

__version__ = "0.1.0"

__all__ = ["Parameter", "ShapeError", "StyleMatrix", "Tensor", "no_grad", "__version__"]
