"""Pluggable model backends: interfaces, count references, service adapter."""

from .base import (
    ChoiceScorerBackend,
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
    TokenizerMixin,
    VocabDistribution,
)
from .count import (
    BEGIN_OF_TEXT_TOKEN,
    CountBigramGenerator,
    CountMaskedLM,
    CountPairClassifier,
)
from .service import BackendServer, BackendSet, ServiceBackend, serve_http, serve_tcp

__all__ = [
    "BEGIN_OF_TEXT_TOKEN",
    "BackendServer",
    "BackendSet",
    "ChoiceScorerBackend",
    "CountBigramGenerator",
    "CountMaskedLM",
    "CountPairClassifier",
    "GeneratorBackend",
    "MaskedLMBackend",
    "PairClassifierBackend",
    "ServiceBackend",
    "TokenizerMixin",
    "VocabDistribution",
    "serve_http",
    "serve_tcp",
]
