"""Masked-token pseudo-log-likelihood scoring of statements.

A statement is scored by masking each position in turn, asking a masked LM
for the probability of the original token, and summing the logs. Of a
statement pair, the one with the higher score reads as the more plausible.
The raw sum can be length-normalized two ways: ``length_root`` is the
geometric mean probability P^(1/N) (higher is better), ``perplexity`` is
its reciprocal P^(-1/N) (lower is better).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .backends.base import ChoiceScorerBackend, MaskedLMBackend
from .data import StatementPair
from .text import MASK_TOKEN, TokenSequence, sequence_for_text
from .validation import check_choice, check_token_sequence

NORMALIZATION_MODES = ("raw", "length_root", "perplexity")

# Probabilities below this are treated as the floor so a zero from a backend
# clamps to a large negative log instead of negative infinity.
PROBABILITY_FLOOR = 1e-12

# Two normalized scores within this of each other count as a tie.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MaskedVariant:
    """One masked copy of a sequence and what the mask replaced."""

    sequence: TokenSequence
    masked_position: int
    original_token: str


@dataclass(frozen=True)
class PlausibilityScore:
    """A sequence score: the raw log-probability sum or a normalization of it.

    ``clamped`` records that at least one token probability hit the floor,
    which usually means the backend assigned an exact zero.
    """

    log_prob_sum: float
    token_count: int
    mode: str = "raw"
    value: float = 0.0
    clamped: bool = False

    def __post_init__(self):
        check_choice(self.mode, NORMALIZATION_MODES, "mode")
        if self.token_count < 1:
            raise ValueError(f"token_count must be >= 1, got {self.token_count}")
        if not math.isfinite(self.log_prob_sum) or self.log_prob_sum > 0:
            raise ValueError(f"log_prob_sum must be finite and <= 0, got {self.log_prob_sum}")


@dataclass(frozen=True)
class PlausibilityDecision:
    """choose_plausible output: the winning index, tie flag, and both scores."""

    index: int
    tie: bool
    scores: tuple[PlausibilityScore, PlausibilityScore]


def enumerate_masked_variants(
    seq: TokenSequence,
    mask_token: str = MASK_TOKEN,
    content_only: bool = False,
) -> list[MaskedVariant]:
    """All single-position masked copies of ``seq``, left to right.

    With ``content_only=False`` (the default) the begin/end markers are
    masked too, which is the behavior the scoring pipelines assume; with
    ``content_only=True`` only interior positions are masked.
    """
    check_token_sequence(seq, "seq")
    positions = range(1, len(seq) - 1) if content_only else range(len(seq))
    return [
        MaskedVariant(seq.replaced(i, mask_token), i, seq[i])
        for i in positions
    ]


def pseudo_log_likelihood(
    seq: TokenSequence,
    backend: MaskedLMBackend,
    content_only: bool = False,
    probability_floor: float = PROBABILITY_FLOOR,
) -> PlausibilityScore:
    """Sum of log probabilities of each original token behind its mask."""
    if not 0 < probability_floor < 1:
        raise ValueError(f"probability_floor must be in (0, 1), got {probability_floor}")
    variants = enumerate_masked_variants(seq, backend.mask_token, content_only=content_only)
    total = 0.0
    clamped = False
    for variant in variants:
        dist = backend.predict_masked(variant.sequence, variant.masked_position)
        # min() guards against a remote distribution whose rounding puts a
        # token a hair above 1, which would flip the sum positive.
        p = min(dist.prob(variant.original_token), 1.0)
        if p < probability_floor:
            p = probability_floor
            clamped = True
        total += math.log(p)
    return PlausibilityScore(
        log_prob_sum=total,
        token_count=len(variants),
        mode="raw",
        value=total,
        clamped=clamped,
    )


def apply_normalization(score: PlausibilityScore, mode: str) -> PlausibilityScore:
    """Re-express a raw score in the requested mode.

    length_root = exp(sum/N) is the geometric mean token probability;
    perplexity = exp(-sum/N) is its reciprocal, so for any fixed score
    length_root * perplexity = 1.
    """
    check_choice(mode, NORMALIZATION_MODES, "mode")
    if score.mode != "raw":
        raise ValueError(f"can only normalize a raw score, got mode {score.mode!r}")
    if score.token_count == 0:
        raise ValueError("cannot normalize a score over zero tokens")
    if mode == "raw":
        return score
    mean_log = score.log_prob_sum / score.token_count
    value = math.exp(mean_log) if mode == "length_root" else math.exp(-mean_log)
    return replace(score, mode=mode, value=value)


def _statement_score(
    text: str, backend: MaskedLMBackend, mode: str, content_only: bool
) -> PlausibilityScore:
    seq = sequence_for_text(
        text, tokenize=backend.tokenize, begin=backend.begin_marker, end=backend.end_marker
    )
    return apply_normalization(
        pseudo_log_likelihood(seq, backend, content_only=content_only), mode
    )


def choose_plausible(
    pair: StatementPair,
    backend: MaskedLMBackend,
    mode: str = "raw",
    content_only: bool = False,
) -> PlausibilityDecision:
    """Index of the statement the backend finds more plausible.

    Higher wins for raw and length_root; lower wins for perplexity. Values
    equal within 1e-12 are a tie, reported as index 0 with the flag set.
    """
    scores = tuple(
        _statement_score(text, backend, mode, content_only) for text in pair.statements
    )
    a, b = scores[0].value, scores[1].value
    if abs(a - b) <= TIE_TOLERANCE:
        return PlausibilityDecision(index=0, tie=True, scores=scores)
    better_is_lower = mode == "perplexity"
    winner = int((a > b) if better_is_lower else (a < b))
    return PlausibilityDecision(index=winner, tie=False, scores=scores)


def predict_nonsense(
    pair: StatementPair,
    backend: MaskedLMBackend,
    mode: str = "raw",
    content_only: bool = False,
) -> int:
    """Index of the against-common-sense statement: the choose_plausible complement."""
    return 1 - choose_plausible(pair, backend, mode=mode, content_only=content_only).index


class PllChoiceScorer(ChoiceScorerBackend):
    """Choice scorer defined by masked-LM pseudo-log-likelihood.

    Wraps a masked backend so whole candidate sequences can be ranked with
    score_choice. Perplexity values are negated so that a higher returned
    score always means more plausible; selections therefore reproduce
    choose_plausible decisions in every mode.
    """

    def __init__(
        self,
        masked_lm: MaskedLMBackend,
        normalization: str = "raw",
        content_only: bool = False,
    ):
        check_choice(normalization, NORMALIZATION_MODES, "normalization")
        self.masked_lm = masked_lm
        self.normalization = normalization
        self.content_only = content_only
        self.begin_marker = masked_lm.begin_marker
        self.end_marker = masked_lm.end_marker
        self.mask_token = masked_lm.mask_token
        self.unknown_token = masked_lm.unknown_token

    def tokenize(self, text: str) -> list[str]:
        return self.masked_lm.tokenize(text)

    def score_choice(self, seq: TokenSequence) -> float:
        check_token_sequence(seq, "seq")
        score = apply_normalization(
            pseudo_log_likelihood(seq, self.masked_lm, content_only=self.content_only),
            self.normalization,
        )
        return -score.value if self.normalization == "perplexity" else score.value
