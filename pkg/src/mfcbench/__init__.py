"""Sample-complexity workbench for dictionary learning and matrix factorizations."""

__version__ = "0.1.0"
