"""News recommendation with zero-pad and concatenated history batching."""

__version__ = "0.1.0"
