"""Input-validation helpers used across the package.

These follow the sklearn convention of small check_* functions that either
return the validated value or raise ValueError with a pointed message.
"""

from __future__ import annotations

from typing import Sequence

from .text import TokenSequence


def check_text(value: str, name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{name} must be a non-empty string")
    return value


def check_index(value: int, upper: int, name: str) -> int:
    """Validate an integer index in [0, upper)."""
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < upper:
        raise ValueError(f"{name} must be an integer in [0, {upper}), got {value!r}")
    return value


def check_token_sequence(seq: TokenSequence, name: str = "seq", require_specials: bool = True) -> TokenSequence:
    if not isinstance(seq, TokenSequence):
        raise ValueError(f"{name} must be a TokenSequence, got {type(seq).__name__}")
    if require_specials and not seq.has_specials:
        raise ValueError(f"{name} must carry begin/end markers (has_specials=True)")
    return seq


def check_positive(value: float, name: str, strict: bool = True) -> float:
    bad = value <= 0 if strict else value < 0
    if bad:
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value


def check_choice(value: str, allowed: Sequence[str], name: str) -> str:
    if value not in allowed:
        raise ValueError(f"{name} must be one of {sorted(allowed)}, got {value!r}")
    return value
