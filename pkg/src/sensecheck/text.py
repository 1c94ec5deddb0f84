"""Text preprocessing shared by every pipeline.

All scoring paths feed statements through the same three steps: terminal
punctuation is normalized, text is tokenized, and the token list is wrapped
in begin/end markers. Keeping these in one place is what makes scores
comparable across pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

BEGIN_TOKEN = "[CLS]"
END_TOKEN = "[SEP]"
MASK_TOKEN = "[MASK]"
UNKNOWN_TOKEN = "[UNK]"
END_OF_TEXT_TOKEN = "[EOS]"

_TERMINAL_PUNCTUATION = (".", "!", "?")


def ensure_terminal_period(text: str) -> str:
    """Return ``text`` ending in terminal punctuation, appending "." if needed.

    Trailing whitespace is removed first, so the function is idempotent.
    Scoring a statement without its final period systematically misranks it,
    so every pipeline calls this before tokenizing.
    """
    if not text or not text.strip():
        raise ValueError("cannot normalize an empty or whitespace-only statement")
    trimmed = text.rstrip()
    if trimmed.endswith(_TERMINAL_PUNCTUATION):
        return trimmed
    return trimmed + "."


def tokenize_reference(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, split on whitespace.

    Every non-alphanumeric, non-whitespace character becomes its own token:
    "don't stop!" -> ["don", "'", "t", "stop", "!"]. This is the tokenizer
    used by the count backends and by BLEU; neural adapters supply their own.
    """
    if not text or not text.strip():
        raise ValueError("cannot tokenize an empty or whitespace-only text")
    tokens: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
            continue
        if word:
            tokens.append("".join(word))
            word = []
        if not ch.isspace():
            tokens.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


@dataclass(frozen=True)
class TokenSequence:
    """An immutable token list, optionally wrapped in begin/end markers.

    When ``has_specials`` is true the first and last tokens are marker
    tokens and the sequence is at least 3 long, so there is always a
    non-marker interior position to score.
    """

    tokens: tuple[str, ...]
    has_specials: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("TokenSequence requires at least one token")
        if any(not isinstance(t, str) or not t for t in self.tokens):
            raise ValueError("TokenSequence tokens must be non-empty strings")
        if self.has_specials and len(self.tokens) < 3:
            raise ValueError(
                "a sequence with specials needs begin, end, and at least one "
                f"interior token; got {list(self.tokens)}"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __getitem__(self, index: int) -> str:
        return self.tokens[index]

    @property
    def interior(self) -> tuple[str, ...]:
        """Tokens between the markers (all tokens when unwrapped)."""
        return self.tokens[1:-1] if self.has_specials else self.tokens

    def replaced(self, position: int, token: str) -> "TokenSequence":
        """Copy of the sequence with one token substituted."""
        if not 0 <= position < len(self.tokens):
            raise IndexError(f"position {position} outside sequence of length {len(self.tokens)}")
        swapped = self.tokens[:position] + (token,) + self.tokens[position + 1 :]
        return TokenSequence(swapped, has_specials=self.has_specials)


def wrap_special(
    tokens: Sequence[str] | Iterable[str],
    begin: str = BEGIN_TOKEN,
    end: str = END_TOKEN,
) -> TokenSequence:
    """Wrap a plain token list in begin/end markers.

    Rejects empty input and input that already carries the markers, so a
    sequence can never be wrapped twice.
    """
    if isinstance(tokens, TokenSequence):
        if tokens.has_specials:
            raise ValueError("sequence already has special markers")
        tokens = tokens.tokens
    toks = tuple(tokens)
    if not toks:
        raise ValueError("cannot wrap an empty token list")
    if len(toks) >= 2 and toks[0] == begin and toks[-1] == end:
        raise ValueError(f"token list already wrapped in {begin!r}/{end!r}")
    return TokenSequence((begin,) + toks + (end,), has_specials=True)


def sequence_for_text(
    text: str,
    tokenize=tokenize_reference,
    begin: str = BEGIN_TOKEN,
    end: str = END_TOKEN,
) -> TokenSequence:
    """Normalize punctuation, tokenize, and wrap: the standard statement prep."""
    return wrap_special(tokenize(ensure_terminal_period(text)), begin=begin, end=end)
