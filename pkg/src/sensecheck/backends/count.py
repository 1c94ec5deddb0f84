"""Deterministic count-based reference backends.

These exist so every pipeline runs and can be hand-checked without any
pretrained weights: a Laplace-smoothed unigram masked LM, a pair classifier
built on the same unigram statistics, and a smoothed bigram generator. All
are sklearn estimators fitted from an iterable of corpus texts.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..text import TokenSequence
from ..validation import check_positive
from .base import (
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
    VocabDistribution,
)

# Conditioning symbol for the empty prefix; never predicted, so it is not
# part of any distribution's support.
BEGIN_OF_TEXT_TOKEN = "[BOS]"


def _count_tokens(backend, corpus: Iterable[str]) -> list[list[str]]:
    texts = [backend.tokenize(line) for line in corpus]
    if not texts:
        raise ValueError("training corpus is empty")
    return texts


class CountMaskedLM(BaseEstimator, MaskedLMBackend):
    """Position-independent smoothed unigram masked LM.

    After ``fit`` every masked query returns the same distribution
    P(t) = (count(t) + alpha) / (N + alpha * |V|) over the observed
    vocabulary V. Lookups outside V (unknown words, marker tokens) return
    the zero-count value alpha / (N + alpha * |V|), so scoring never fails
    on unseen input.

    Parameters
    ----------
    alpha : float, default=1.0
        Additive smoothing weight; must be > 0.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, corpus: Iterable[str], y=None) -> "CountMaskedLM":
        check_positive(self.alpha, "alpha")
        counts: Counter[str] = Counter()
        for tokens in _count_tokens(self, corpus):
            counts.update(tokens)
        total = sum(counts.values())
        denom = total + self.alpha * len(counts)
        self.token_counts_ = dict(counts)
        self.total_count_ = total
        self.content_vocabulary_ = frozenset(counts)
        self.distribution_ = VocabDistribution(
            {t: (c + self.alpha) / denom for t, c in counts.items()},
            default_prob=self.alpha / denom,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "distribution_"):
            raise NotFittedError("CountMaskedLM must be fitted before use")

    @property
    def vocabulary(self) -> frozenset[str]:
        self._check_fitted()
        return self.content_vocabulary_ | {
            self.mask_token,
            self.begin_marker,
            self.end_marker,
            self.unknown_token,
        }

    def predict_masked(self, seq: TokenSequence, position: int) -> VocabDistribution:
        self._check_fitted()
        self.check_masked_query(seq, position)
        return self.distribution_


class CountPairClassifier(BaseEstimator, PairClassifierBackend):
    """Pair classifier over the same smoothed unigram statistics.

    Each segment of a ``[begin] s0 [sep] s1 [sep]`` sequence gets its mean
    per-token log-probability; the nonsense distribution is the softmax of
    the negated means. Identical segments therefore classify as exactly
    (0.5, 0.5), and a segment with more unknown tokens (which sit at the
    smoothing floor) gets the higher nonsense probability.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, corpus: Iterable[str], y=None) -> "CountPairClassifier":
        self.unigram_ = CountMaskedLM(alpha=self.alpha).fit(corpus)
        return self

    def _mean_log_prob(self, segment: Sequence[str]) -> float:
        dist = self.unigram_.distribution_
        return math.fsum(math.log(dist.prob(t)) for t in segment) / len(segment)

    def classify_pair(self, seq: TokenSequence) -> tuple[float, float]:
        if not hasattr(self, "unigram_"):
            raise NotFittedError("CountPairClassifier must be fitted before use")
        seg0, seg1 = self.split_pair(seq)
        scores = (-self._mean_log_prob(seg0), -self._mean_log_prob(seg1))
        top = max(scores)
        exps = [math.exp(s - top) for s in scores]
        z = exps[0] + exps[1]
        return (exps[0] / z, exps[1] / z)


class CountBigramGenerator(BaseEstimator, GeneratorBackend):
    """Smoothed bigram next-token model.

    The predictable vocabulary is the observed tokens plus the end-of-text
    and unknown symbols; an empty prefix conditions on an implied
    begin-of-text symbol, and out-of-vocabulary prefix tokens condition on
    the unknown symbol. Unseen contexts therefore yield the smoothed
    uniform distribution, never an error.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, corpus: Iterable[str], y=None) -> "CountBigramGenerator":
        check_positive(self.alpha, "alpha")
        bigrams: dict[str, Counter[str]] = {}
        vocab: set[str] = set()
        for tokens in _count_tokens(self, corpus):
            vocab.update(tokens)
            context = BEGIN_OF_TEXT_TOKEN
            for token in tokens + [self.eot_token]:
                bigrams.setdefault(context, Counter())[token] += 1
                context = token
        self.bigram_counts_ = {c: dict(n) for c, n in bigrams.items()}
        self.support_ = tuple(sorted(vocab | {self.eot_token, self.unknown_token}))
        self.content_vocabulary_ = frozenset(vocab)
        self._cache: dict[str, VocabDistribution] = {}
        return self

    def _distribution_for(self, context: str) -> VocabDistribution:
        # Concurrent first lookups may build the same entry twice; the value
        # is identical either way, so no lock is needed.
        cached = self._cache.get(context)
        if cached is not None:
            return cached
        counts = self.bigram_counts_.get(context, {})
        total = sum(counts.values())
        denom = total + self.alpha * len(self.support_)
        dist = VocabDistribution(
            {t: (counts.get(t, 0) + self.alpha) / denom for t in self.support_}
        )
        self._cache[context] = dist
        return dist

    def next_token_distribution(self, prefix: Sequence[str]) -> VocabDistribution:
        if not hasattr(self, "support_"):
            raise NotFittedError("CountBigramGenerator must be fitted before use")
        if not prefix:
            context = BEGIN_OF_TEXT_TOKEN
        else:
            last = prefix[-1]
            if not isinstance(last, str) or not last:
                raise ValueError("prefix tokens must be non-empty strings")
            context = last if last in self.content_vocabulary_ else self.unknown_token
        return self._distribution_for(context)
