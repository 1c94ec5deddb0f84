"""Exception types shared across the toolkit."""

from __future__ import annotations


class DatasetError(ValueError):
    """A dataset or answers file failed to parse or validate."""


class ServiceProtocolError(RuntimeError):
    """An inference service sent a response that violates the wire protocol."""


class GenerationError(RuntimeError):
    """Decoding failed part-way through; carries whatever was produced."""

    def __init__(self, message: str, partial_text: str = ""):
        super().__init__(message)
        self.partial_text = partial_text
