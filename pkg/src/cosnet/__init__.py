"""Boundary-enhancing segmentation network on a small float64 autodiff engine."""

from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
