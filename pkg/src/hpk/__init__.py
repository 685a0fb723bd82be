"""Conditioning blocks for diffusion-based portrait animation, at desk scale."""
from .numeric import Tensor, backward, clip_grad_norm

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "clip_grad_norm", "__version__"]
