"""Thin-structure semantic segmentation toolkit.

From-scratch numpy implementation of a luminance-augmented, attention-gated
encoder-decoder with iterative feedback, plus the preprocessing, losses,
metrics, synthetic scene generator, and training harness around it.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "__version__"]
