"""Pair classification and multiple-choice reframing.

Two ways to compare candidate statements: concatenate the pair into one
sequence and classify it, or encode each candidate separately and rank
scores. Separate encoding means a candidate's score can never depend on
what it is compared against. The same machinery selects the best of three
candidate reasons for a false statement, where each candidate is the
statement and one reason rendered as a single text.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends.base import ChoiceScorerBackend, PairClassifierBackend, TokenizerMixin
from .data import ExplanationItem, StatementPair
from .text import TokenSequence, ensure_terminal_period, sequence_for_text
from .validation import check_index

# Classification probabilities or choice scores within this of each other
# count as a tie; ties resolve to the lowest index with the flag set.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ChoiceSet:
    """Candidate sequences for one item, with the gold index when labeled."""

    item_id: str
    sequences: tuple[TokenSequence, ...]
    gold_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if len(self.sequences) < 2:
            raise ValueError("a choice set needs at least two candidates")
        for seq in self.sequences:
            if not isinstance(seq, TokenSequence) or not seq.has_specials:
                raise ValueError("choice candidates must be marker-wrapped TokenSequences")
        if self.gold_index is not None:
            check_index(self.gold_index, len(self.sequences), "gold_index")


@dataclass(frozen=True)
class ClassificationResult:
    nonsense_index: int
    probabilities: tuple[float, float]
    tie: bool


@dataclass(frozen=True)
class Selection:
    index: int
    scores: tuple[float, ...]
    tie: bool


def concat_pair(pair: StatementPair, backend: TokenizerMixin) -> TokenSequence:
    """Render a pair as one sequence: [begin] sent0 [sep] sent1 [sep].

    Both statements are period-normalized and tokenized with the backend's
    tokenizer; the backend's end marker doubles as the separator.
    """
    tokens = [backend.begin_marker]
    for text in pair.statements:
        tokens.extend(backend.tokenize(ensure_terminal_period(text)))
        tokens.append(backend.end_marker)
    return TokenSequence(tokens, has_specials=True)


def classify_validation(pair: StatementPair, classifier: PairClassifierBackend) -> ClassificationResult:
    """Which statement does the classifier call nonsense?"""
    p0, p1 = classifier.classify_pair(concat_pair(pair, classifier))
    tie = abs(p0 - p1) <= TIE_TOLERANCE
    return ClassificationResult(
        nonsense_index=0 if tie else int(p1 > p0),
        probabilities=(p0, p1),
        tie=tie,
    )


def build_validation_choices(pair: StatementPair, backend: TokenizerMixin) -> ChoiceSet:
    """Each statement as its own candidate; gold is the sensible one."""
    gold = None if pair.nonsense_index is None else 1 - pair.nonsense_index
    sequences = tuple(
        sequence_for_text(
            text, tokenize=backend.tokenize, begin=backend.begin_marker, end=backend.end_marker
        )
        for text in pair.statements
    )
    return ChoiceSet(item_id=pair.id, sequences=sequences, gold_index=gold)


def build_explanation_candidates(
    item: ExplanationItem,
    backend: TokenizerMixin,
    include_separator: bool = False,
) -> ChoiceSet:
    """One candidate per reason: the false statement and the reason as one text.

    The two texts are period-normalized and joined with a single space
    before tokenizing, e.g. "He drinks apple. Apple can not be drunk.".
    ``include_separator`` instead inserts the end marker between them for
    models trained on two-segment input.
    """
    statement = ensure_terminal_period(item.false_statement)
    sequences = []
    for option in item.options:
        ending = ensure_terminal_period(option)
        if include_separator:
            tokens = (
                [backend.begin_marker]
                + backend.tokenize(statement)
                + [backend.end_marker]
                + backend.tokenize(ending)
                + [backend.end_marker]
            )
        else:
            tokens = (
                [backend.begin_marker]
                + backend.tokenize(statement + " " + ending)
                + [backend.end_marker]
            )
        sequences.append(TokenSequence(tokens, has_specials=True))
    return ChoiceSet(item_id=item.id, sequences=tuple(sequences), gold_index=item.gold_index)


def select_choice(choices: ChoiceSet, scorer: ChoiceScorerBackend) -> Selection:
    """Highest-scoring candidate; ties go to the lowest index with the flag set."""
    scores = tuple(scorer.score_choice(seq) for seq in choices.sequences)
    best = max(scores)
    tied = [i for i, s in enumerate(scores) if abs(s - best) <= TIE_TOLERANCE]
    return Selection(index=tied[0], scores=scores, tie=len(tied) > 1)


def select_explanation(
    item: ExplanationItem,
    scorer: ChoiceScorerBackend,
    include_separator: bool = False,
) -> int:
    """Index of the best-supported reason for the false statement."""
    choices = build_explanation_candidates(item, scorer, include_separator=include_separator)
    return select_choice(choices, scorer).index
