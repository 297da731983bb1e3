"""Finch: a small task-parallel language with finish elimination and
dynamic load-balanced chunking, plus a multi-worker interpreter."""

__version__ = "0.1.0"
