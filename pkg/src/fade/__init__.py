"""Feature-space DAG cell search with differentiable hyper-architectures."""

__version__ = "0.1.0"
