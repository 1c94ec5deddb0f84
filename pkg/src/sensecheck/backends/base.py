"""Backend interfaces and the distribution type they all speak.

Four capabilities cover the three pipelines: masked-token prediction,
pair classification, whole-sequence choice scoring, and next-token
prediction. Deterministic count-based implementations live in
``backends.count``; remote models attach through ``backends.service``.
Backends are read-only after construction/fit and safe to call from
multiple threads.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..text import (
    BEGIN_TOKEN,
    END_OF_TEXT_TOKEN,
    END_TOKEN,
    MASK_TOKEN,
    TokenSequence,
    UNKNOWN_TOKEN,
    tokenize_reference,
)

_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class VocabDistribution:
    """A normalized distribution over tokens.

    ``probabilities`` is the explicit support and must sum to 1 within 1e-9.
    ``default_prob`` is what a lookup outside the support returns; count
    backends use it for the reserved unknown-symbol mass, the service client
    uses it for the catch-all share of a truncated top-k response. It is not
    part of the normalization sum.
    """

    probabilities: Mapping[str, float]
    default_prob: float = 0.0

    def __post_init__(self):
        probs = dict(self.probabilities)
        if not probs:
            raise ValueError("distribution needs at least one token")
        for token, p in probs.items():
            if not token:
                raise ValueError("distribution contains an empty token")
            if not math.isfinite(p) or p < 0:
                raise ValueError(f"probability of {token!r} must be finite and >= 0, got {p}")
        total = math.fsum(probs.values())
        if abs(total - 1.0) > _SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, expected 1 within {_SUM_TOLERANCE}")
        if not math.isfinite(self.default_prob) or self.default_prob < 0:
            raise ValueError(f"default_prob must be finite and >= 0, got {self.default_prob}")
        object.__setattr__(self, "probabilities", probs)

    def prob(self, token: str) -> float:
        return self.probabilities.get(token, self.default_prob)

    def argmax(self) -> str:
        """Highest-probability token; ties broken by token sort order."""
        return min(self.probabilities, key=lambda t: (-self.probabilities[t], t))


class TokenizerMixin:
    """Marker names and the tokenizer shared by the bundled backends."""

    begin_marker: str = BEGIN_TOKEN
    end_marker: str = END_TOKEN
    mask_token: str = MASK_TOKEN
    unknown_token: str = UNKNOWN_TOKEN

    def tokenize(self, text: str) -> list[str]:
        return tokenize_reference(text)


class MaskedLMBackend(TokenizerMixin, abc.ABC):
    """Predicts the token behind a mask marker."""

    @property
    @abc.abstractmethod
    def vocabulary(self) -> frozenset[str]:
        """All tokens the backend knows, marker tokens included."""

    @abc.abstractmethod
    def predict_masked(self, seq: TokenSequence, position: int) -> VocabDistribution:
        """Distribution over the token at ``position``, which must hold the mask."""

    def check_masked_query(self, seq: TokenSequence, position: int) -> None:
        """Shared precondition enforcement for predict_masked implementations."""
        if not isinstance(seq, TokenSequence) or not seq.has_specials:
            raise ValueError("predict_masked requires a marker-wrapped TokenSequence")
        if not 0 <= position < len(seq):
            raise ValueError(f"position {position} outside sequence of length {len(seq)}")
        if seq[position] != self.mask_token:
            raise ValueError(
                f"token at position {position} is {seq[position]!r}, not the mask "
                f"token {self.mask_token!r}"
            )


class PairClassifierBackend(TokenizerMixin, abc.ABC):
    """Classifies a concatenated statement pair: which side is nonsense."""

    @abc.abstractmethod
    def classify_pair(self, seq: TokenSequence) -> tuple[float, float]:
        """(P(statement 0 is nonsense), P(statement 1 is nonsense))."""

    def split_pair(self, seq: TokenSequence) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """Split a ``[begin] s0 [sep] s1 [sep]`` sequence into its two segments."""
        if not isinstance(seq, TokenSequence) or not seq.has_specials:
            raise ValueError("classify_pair requires a marker-wrapped TokenSequence")
        tokens = seq.tokens
        if tokens[0] != self.begin_marker or tokens[-1] != self.end_marker:
            raise ValueError(
                f"expected sequence framed by {self.begin_marker!r}..{self.end_marker!r}"
            )
        cuts = [i for i, t in enumerate(tokens) if t == self.end_marker and 0 < i < len(tokens) - 1]
        if len(cuts) != 1:
            raise ValueError(
                "malformed pair concatenation: expected exactly one interior "
                f"{self.end_marker!r} separator, found {len(cuts)}"
            )
        seg0 = tokens[1 : cuts[0]]
        seg1 = tokens[cuts[0] + 1 : -1]
        if not seg0 or not seg1:
            raise ValueError("malformed pair concatenation: empty segment")
        return seg0, seg1


class ChoiceScorerBackend(TokenizerMixin, abc.ABC):
    """Scores one candidate sequence; higher means more plausible."""

    @abc.abstractmethod
    def score_choice(self, seq: TokenSequence) -> float:
        """Plausibility score of a single marker-wrapped candidate."""


class GeneratorBackend(TokenizerMixin, abc.ABC):
    """Autoregressive next-token prediction."""

    eot_token: str = END_OF_TEXT_TOKEN

    @abc.abstractmethod
    def next_token_distribution(self, prefix: Sequence[str]) -> VocabDistribution:
        """Distribution over the next token given a (possibly empty) prefix."""

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)
