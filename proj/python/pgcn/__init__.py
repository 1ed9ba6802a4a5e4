"""Python bindings for the pose-graph action recognition core."""

try:
    from ._pgcn import *  # noqa: F401,F403  (installed package layout)
    from . import _pgcn as _impl
except ImportError:  # build-tree layout: extension module sits on sys.path
    from _pgcn import *  # noqa: F401,F403
    import _pgcn as _impl

__all__ = [name for name in dir(_impl) if not name.startswith("_")]
