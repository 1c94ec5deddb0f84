"""Accuracy and corpus BLEU under one declared convention.

BLEU implementations differ in smoothing, brevity handling, and
tokenization, so scores are only comparable when the convention matches.
This one is pinned as follows and used everywhere in the package:

* candidate and reference texts go through the reference tokenizer;
* modified n-gram precision for n = 1..4, each candidate n-gram clipped
  against its maximum count over that example's references;
* numerators and denominators are summed over the corpus before dividing;
* an order n >= 2 with zero matches gets add-one smoothing (numerator and
  denominator both + 1); a zero-match unigram order is never smoothed and
  makes the whole score 0;
* an order with no candidate n-grams at all contributes precision 1;
* the reference length r sums each example's closest reference length,
  ties going to the shorter reference; brevity penalty is
  min(1, e^(1 - r/c));
* score = 100 * BP * exp(mean of log precisions), on a 0-100 scale.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .text import tokenize_reference

MAX_NGRAM_ORDER = 4


@dataclass(frozen=True)
class AccuracyReport:
    correct: int
    total: int
    accuracy: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    candidate_length: int
    reference_length: int

    def as_dict(self) -> dict:
        d = asdict(self)
        d["precisions"] = list(self.precisions)
        return d


def accuracy(predictions: Sequence[int], gold: Sequence[int]) -> AccuracyReport:
    if len(predictions) != len(gold):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not predictions:
        raise ValueError("cannot score an empty prediction list")
    correct = sum(int(p == g) for p, g in zip(predictions, gold))
    return AccuracyReport(correct=correct, total=len(gold), accuracy=correct / len(gold))


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _example_id(ids: Sequence[str] | None, index: int) -> str:
    return ids[index] if ids is not None else str(index)


def corpus_bleu(
    candidates: Sequence[str],
    references: Sequence[Sequence[str]],
    ids: Sequence[str] | None = None,
) -> BleuReport:
    """Corpus BLEU of candidate texts against per-example reference lists.

    ``ids`` only improves error messages; it must align with ``candidates``
    when given.
    """
    if len(candidates) != len(references):
        raise ValueError(
            f"length mismatch: {len(candidates)} candidates vs {len(references)} reference lists"
        )
    if not candidates:
        raise ValueError("cannot score an empty candidate list")
    if ids is not None and len(ids) != len(candidates):
        raise ValueError("ids must align with candidates")

    matches = [0] * MAX_NGRAM_ORDER
    totals = [0] * MAX_NGRAM_ORDER
    candidate_length = 0
    reference_length = 0

    for idx, (candidate, refs) in enumerate(zip(candidates, references)):
        if not refs:
            raise ValueError(f"example {_example_id(ids, idx)!r} has no references")
        try:
            cand_tokens = tokenize_reference(candidate)
        except ValueError:
            raise ValueError(
                f"candidate for example {_example_id(ids, idx)!r} has no tokens"
            ) from None
        ref_token_lists = [tokenize_reference(r) for r in refs]

        c = len(cand_tokens)
        candidate_length += c
        # Closest reference length; ties resolved toward the shorter one.
        reference_length += min((len(r) for r in ref_token_lists), key=lambda L: (abs(L - c), L))

        for n in range(1, MAX_NGRAM_ORDER + 1):
            cand_counts = _ngram_counts(cand_tokens, n)
            if not cand_counts:
                continue
            max_ref_counts: Counter = Counter()
            for ref_tokens in ref_token_lists:
                for gram, count in _ngram_counts(ref_tokens, n).items():
                    if count > max_ref_counts[gram]:
                        max_ref_counts[gram] = count
            totals[n - 1] += sum(cand_counts.values())
            matches[n - 1] += sum(
                min(count, max_ref_counts[gram]) for gram, count in cand_counts.items()
            )

    precisions: list[float] = []
    for n in range(1, MAX_NGRAM_ORDER + 1):
        m, t = matches[n - 1], totals[n - 1]
        if t == 0:
            precisions.append(1.0)
        elif m == 0 and n >= 2:
            precisions.append(1.0 / (t + 1.0))
        else:
            precisions.append(m / t)

    brevity_penalty = min(1.0, math.exp(1.0 - reference_length / candidate_length))
    if precisions[0] == 0.0:
        score = 0.0
    else:
        score = 100.0 * brevity_penalty * math.exp(
            math.fsum(math.log(p) for p in precisions) / MAX_NGRAM_ORDER
        )
    return BleuReport(
        score=score,
        precisions=tuple(precisions),
        brevity_penalty=brevity_penalty,
        candidate_length=candidate_length,
        reference_length=reference_length,
    )


def per_example_bleu(
    candidate: str, references: Sequence[str], example_id: str | None = None
) -> BleuReport:
    """BLEU of one example under exactly the corpus convention."""
    ids = [example_id] if example_id is not None else None
    return corpus_bleu([candidate], [references], ids=ids)
