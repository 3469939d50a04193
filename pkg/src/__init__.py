"""Decoupled inpainting guidance and zero-shot posterior samplers over analytic priors."""

__version__ = "0.1.0"
