"""Swin-transformer detection models with YoloR-style necks and heads,
built on a self-contained numpy autodiff core."""

__version__ = "0.1.0"

from . import nn

__all__ = ["nn", "__version__"]
