"""Exception types shared across the package."""

from __future__ import annotations


class LagflowError(Exception):
    """Base class for all package errors."""


class DegenerateGraphError(LagflowError):
    """The graph surface lost its immersion/graph property at some node."""

    def __init__(self, message: str, node: tuple[int, ...] | None = None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message)
        self.node = node


class NumericError(LagflowError):
    """Non-finite values appeared in a field."""


class GeneratorError(LagflowError):
    """An initial map could not be constructed to the requested accuracy."""


class ConfigError(LagflowError):
    """Invalid configuration or command-line input."""
