"""Feature-refining generative zero-shot learning on a small numpy autodiff engine."""

__version__ = "0.1.0"
