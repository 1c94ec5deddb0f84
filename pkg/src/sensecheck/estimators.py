"""Task-level sklearn estimators.

Each estimator fits (or accepts) a backend and exposes the usual
fit/predict/score surface, so the pipelines compose with sklearn tooling
(get_params, set_params, clone). ``fit`` takes an iterable of corpus
texts, which is what the count backends learn their statistics from; a
prefit backend (for example a ServiceBackend) can be passed instead, in
which case fit only validates.

* CommonsenseValidator: which statement of a pair is against common sense,
  by masked-LM scoring ("mlm"), pair classification ("classify"), or
  multiple-choice ranking ("mc").
* ExplanationSelector: which of three reasons best explains why a false
  statement is false.
* ReasonGenerator: produce a reason, by decoding ("lm") or the identity
  baseline ("identity").
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backends.base import (
    ChoiceScorerBackend,
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
)
from .backends.count import CountBigramGenerator, CountMaskedLM, CountPairClassifier
from .choice import (
    Selection,
    build_explanation_candidates,
    build_validation_choices,
    classify_validation,
    select_choice,
)
from .data import ExplanationItem, GenerationItem, StatementPair
from .generation import DecodeConfig, batch_generate
from .metrics import accuracy
from .plausibility import NORMALIZATION_MODES, PllChoiceScorer, choose_plausible
from .validation import check_choice

VALIDATION_METHODS = ("mlm", "classify", "mc")
GENERATION_METHODS = ("identity", "lm")


def _fit_or_adopt(backend, required_type, default_factory, corpus, name):
    """Use a conforming prefit backend, or fit the count default from corpus."""
    if backend is not None:
        if not isinstance(backend, required_type):
            raise ValueError(
                f"{name} backend must implement {required_type.__name__}, "
                f"got {type(backend).__name__}"
            )
        return backend
    if corpus is None:
        raise ValueError(f"{name} needs either a corpus to fit on or a prefit backend")
    return default_factory().fit(corpus)


class CommonsenseValidator(BaseEstimator):
    """Predict the nonsense statement index (0 or 1) for statement pairs.

    Parameters
    ----------
    method : {"mlm", "classify", "mc"}, default="mlm"
        mlm scores each statement by masked pseudo-log-likelihood,
        classify runs a pair classifier on the concatenation, mc ranks the
        two statements as separately encoded choices.
    normalization : {"raw", "length_root", "perplexity"}, default="raw"
        Score normalization for the mlm and mc methods.
    content_only : bool, default=False
        Skip the begin/end markers when masking.
    alpha : float, default=1.0
        Smoothing weight for the count backend fitted when none is given.
    backend : backend instance or None
        Prefit backend implementing the interface the method needs.
    """

    def __init__(
        self,
        method: str = "mlm",
        normalization: str = "raw",
        content_only: bool = False,
        alpha: float = 1.0,
        backend=None,
    ):
        self.method = method
        self.normalization = normalization
        self.content_only = content_only
        self.alpha = alpha
        self.backend = backend

    def fit(self, corpus: Iterable[str] | None = None, y=None) -> "CommonsenseValidator":
        check_choice(self.method, VALIDATION_METHODS, "method")
        check_choice(self.normalization, NORMALIZATION_MODES, "normalization")
        corpus = list(corpus) if corpus is not None else None
        if self.method == "classify":
            self.backend_ = _fit_or_adopt(
                self.backend,
                PairClassifierBackend,
                lambda: CountPairClassifier(alpha=self.alpha),
                corpus,
                "classify",
            )
        else:
            masked = _fit_or_adopt(
                self.backend,
                MaskedLMBackend,
                lambda: CountMaskedLM(alpha=self.alpha),
                corpus,
                self.method,
            )
            if self.method == "mc":
                self.backend_ = PllChoiceScorer(
                    masked, normalization=self.normalization, content_only=self.content_only
                )
            else:
                self.backend_ = masked
        return self

    def _check_fitted(self):
        if not hasattr(self, "backend_"):
            raise NotFittedError("CommonsenseValidator must be fitted before predicting")

    def predict_one(self, pair: StatementPair) -> tuple[int, bool]:
        """(nonsense index, tie flag) for a single pair."""
        self._check_fitted()
        if self.method == "mlm":
            decision = choose_plausible(
                pair, self.backend_, mode=self.normalization, content_only=self.content_only
            )
            return 1 - decision.index, decision.tie
        if self.method == "classify":
            result = classify_validation(pair, self.backend_)
            return result.nonsense_index, result.tie
        selection = select_choice(build_validation_choices(pair, self.backend_), self.backend_)
        return 1 - selection.index, selection.tie

    def predict(self, pairs: Sequence[StatementPair]) -> np.ndarray:
        return np.array([self.predict_one(pair)[0] for pair in pairs])

    def score(self, pairs: Sequence[StatementPair], y=None) -> float:
        gold = [p.nonsense_index for p in pairs] if y is None else list(y)
        if any(g is None for g in gold):
            raise ValueError("score needs labeled pairs or explicit y")
        return accuracy(list(self.predict(pairs)), gold).accuracy


class ExplanationSelector(BaseEstimator):
    """Predict which of three reasons explains why a statement is false."""

    def __init__(
        self,
        normalization: str = "raw",
        content_only: bool = False,
        alpha: float = 1.0,
        include_separator: bool = False,
        backend=None,
    ):
        self.normalization = normalization
        self.content_only = content_only
        self.alpha = alpha
        self.include_separator = include_separator
        self.backend = backend

    def fit(self, corpus: Iterable[str] | None = None, y=None) -> "ExplanationSelector":
        check_choice(self.normalization, NORMALIZATION_MODES, "normalization")
        corpus = list(corpus) if corpus is not None else None
        if self.backend is not None and isinstance(self.backend, ChoiceScorerBackend):
            self.scorer_ = self.backend
        else:
            masked = _fit_or_adopt(
                self.backend,
                MaskedLMBackend,
                lambda: CountMaskedLM(alpha=self.alpha),
                corpus,
                "explanation",
            )
            self.scorer_ = PllChoiceScorer(
                masked, normalization=self.normalization, content_only=self.content_only
            )
        return self

    def _check_fitted(self):
        if not hasattr(self, "scorer_"):
            raise NotFittedError("ExplanationSelector must be fitted before predicting")

    def select_one(self, item: ExplanationItem) -> Selection:
        self._check_fitted()
        choices = build_explanation_candidates(
            item, self.scorer_, include_separator=self.include_separator
        )
        return select_choice(choices, self.scorer_)

    def predict(self, items: Sequence[ExplanationItem]) -> np.ndarray:
        return np.array([self.select_one(item).index for item in items])

    def score(self, items: Sequence[ExplanationItem], y=None) -> float:
        gold = [i.gold_index for i in items] if y is None else list(y)
        if any(g is None for g in gold):
            raise ValueError("score needs labeled items or explicit y")
        return accuracy(list(self.predict(items)), gold).accuracy


class ReasonGenerator(BaseEstimator):
    """Generate a reason per false statement; predict returns texts."""

    def __init__(
        self,
        method: str = "lm",
        decode: DecodeConfig | None = None,
        alpha: float = 1.0,
        backend=None,
    ):
        self.method = method
        self.decode = decode
        self.alpha = alpha
        self.backend = backend

    def fit(self, corpus: Iterable[str] | None = None, y=None) -> "ReasonGenerator":
        check_choice(self.method, GENERATION_METHODS, "method")
        if self.method == "identity":
            self.generator_ = None
        else:
            self.generator_ = _fit_or_adopt(
                self.backend,
                GeneratorBackend,
                lambda: CountBigramGenerator(alpha=self.alpha),
                list(corpus) if corpus is not None else None,
                "generation",
            )
        self.fitted_ = True
        return self

    def generate(self, items: Sequence[GenerationItem]):
        """(id, candidate) pairs plus any per-item failures."""
        if not hasattr(self, "fitted_"):
            raise NotFittedError("ReasonGenerator must be fitted before generating")
        config = self.decode or DecodeConfig()
        return batch_generate(items, self.generator_, config, method=self.method)

    def predict(self, items: Sequence[GenerationItem]) -> list[str]:
        results, _ = self.generate(items)
        return [text for _, text in results]

    def transform(self, items: Sequence[GenerationItem]) -> list[str]:
        return self.predict(items)
