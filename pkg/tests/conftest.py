"""Shared fixtures: tiny corpora, synthetic datasets, and mock backends."""

from __future__ import annotations

import hashlib
import math

import numpy as np
import pytest

from sensecheck import StatementPair
from sensecheck.backends.base import (
    ChoiceScorerBackend,
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
    VocabDistribution,
)

# Words the synthetic corpora are built from; OOV_WORDS never appear in any
# fitted corpus, so a count backend prices them at the smoothing floor.
DOMAIN_WORDS = (
    "he", "she", "it", "they", "puts", "drinks", "eats", "opens", "the", "a",
    "cold", "warm", "small", "milk", "juice", "bread", "door", "fridge",
    "table", "cup",
)
OOV_WORDS = ("zorgle", "blick", "framble", "quopp", "snerd", "vlim")


class UniformMaskedLM(MaskedLMBackend):
    """Masked LM that prices every token, markers included, identically."""

    def __init__(self, tokens=("a", "b", "c", "d")):
        self._tokens = tuple(tokens)
        p = 1.0 / len(self._tokens)
        self._dist = VocabDistribution({t: p for t in self._tokens}, default_prob=p)

    @property
    def vocabulary(self):
        return frozenset(self._tokens) | {
            self.mask_token,
            self.begin_marker,
            self.end_marker,
            self.unknown_token,
        }

    def predict_masked(self, seq, position):
        self.check_masked_query(seq, position)
        return self._dist


class UnknownCountingClassifier(PairClassifierBackend):
    """Calls a segment nonsense in proportion to its unknown-token count."""

    def __init__(self, known_words):
        self._known = frozenset(known_words)

    def classify_pair(self, seq):
        seg0, seg1 = self.split_pair(seq)
        counts = [sum(1 for t in seg if t not in self._known) for seg in (seg0, seg1)]
        exps = [math.exp(c) for c in counts]
        z = exps[0] + exps[1]
        return (exps[0] / z, exps[1] / z)


class HashScorer(ChoiceScorerBackend):
    """Deterministic scorer: score depends only on the candidate's tokens.

    Distinct sequences collide with probability ~2**-64, so scores are
    effectively tie-free, which permutation and independence tests rely on.
    """

    def score_choice(self, seq):
        digest = hashlib.blake2b(" ".join(seq.tokens).encode(), digest_size=8)
        return int.from_bytes(digest.digest(), "big") / 2.0**64


class ScriptedGenerator(GeneratorBackend):
    """Next-token distributions scripted per last prefix token.

    ``fail_on`` makes the backend raise when that token ends the prefix,
    which is how tests provoke mid-decode failures.
    """

    def __init__(self, table: dict, start_context: str | None = None, fail_on: str | None = None):
        self._table = dict(table)
        self._start = start_context
        self._fail_on = fail_on

    def next_token_distribution(self, prefix):
        last = prefix[-1] if prefix else self._start
        if self._fail_on is not None and last == self._fail_on:
            raise RuntimeError(f"scripted failure at context {last!r}")
        return self._table[last]


def uniform_over(tokens) -> VocabDistribution:
    p = 1.0 / len(tokens)
    return VocabDistribution({t: p for t in tokens})


def peaked(winner: str, others, p: float = 0.9) -> VocabDistribution:
    rest = (1.0 - p) / len(others)
    probs = {t: rest for t in others}
    probs[winner] = p
    return VocabDistribution(probs)


def make_sentence(rng: np.random.Generator, n_words: int = 4) -> str:
    words = rng.choice(DOMAIN_WORDS, size=n_words, replace=True)
    return " ".join(words) + "."


def make_oov_pairs(n: int, seed: int = 7) -> tuple[list[StatementPair], list[str]]:
    """Labeled pairs whose nonsense side holds exactly one out-of-corpus word.

    Returns (pairs, corpus): the corpus is precisely the sense statements,
    so every sense token is observed and every nonsense statement carries
    one token priced at the smoothing floor. A count backend fitted on the
    corpus must then separate every pair.
    """
    rng = np.random.default_rng(seed)
    pairs: list[StatementPair] = []
    corpus: list[str] = []
    for i in range(n):
        sense = make_sentence(rng, n_words=int(rng.integers(3, 6)))
        words = sense[:-1].split()
        slot = int(rng.integers(len(words)))
        bad_words = list(words)
        bad_words[slot] = OOV_WORDS[int(rng.integers(len(OOV_WORDS)))]
        nonsense = " ".join(bad_words) + "."
        nonsense_index = int(rng.integers(2))
        sents = (sense, nonsense) if nonsense_index == 1 else (nonsense, sense)
        pairs.append(StatementPair(str(i), sents[0], sents[1], nonsense_index=nonsense_index))
        corpus.append(sense)
    return pairs, corpus


@pytest.fixture
def anchor_lm():
    """Count masked LM over the two-line anchor corpus {"a b", "a c"}."""
    from sensecheck import CountMaskedLM

    return CountMaskedLM().fit(["a b", "a c"])


@pytest.fixture
def domain_corpus():
    rng = np.random.default_rng(11)
    return [make_sentence(rng, n_words=int(rng.integers(3, 7))) for _ in range(50)]


@pytest.fixture
def uniform_lm():
    return UniformMaskedLM()
