"""Hierarchical multimodal crop-type classification from crop history, satellite series and local crop shares."""

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]


def __getattr__(name):
    # deferred so that importing the package does not load numpy (the CLI sets thread limits first)
    if name == "BACKEND":
        from .accel import BACKEND

        return BACKEND
    raise AttributeError(name)
