"""EER CLI - energy-entropy regularized training for single-head looped Transformers."""

__version__ = "0.1.0"
