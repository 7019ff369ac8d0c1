"""activekg: active knowledge-graph QA with differentiable search and soft rules."""

__version__ = "0.1.0"
