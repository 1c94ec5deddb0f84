"""Common-sense statement checking at desk scale.

Three pipelines over pluggable language-model backends:

* validation: decide which of two statements is against common sense, by
  masked-token pseudo-log-likelihood, pair classification, or
  multiple-choice ranking;
* explanation: pick which of three reasons best explains why a false
  statement is false;
* generation: produce a reason by autoregressive decoding (or the identity
  baseline) and evaluate it with corpus BLEU.

Deterministic count-based backends make every path runnable and
hand-checkable without pretrained weights; larger models attach through
the same interfaces, in process or over a line-delimited JSON protocol.
"""

__version__ = "0.1.0"

from .backends import (
    BackendSet,
    ChoiceScorerBackend,
    CountBigramGenerator,
    CountMaskedLM,
    CountPairClassifier,
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
    ServiceBackend,
    VocabDistribution,
    serve_http,
    serve_tcp,
)
from .choice import (
    ChoiceSet,
    build_explanation_candidates,
    build_validation_choices,
    classify_validation,
    concat_pair,
    select_choice,
    select_explanation,
)
from .data import (
    ExplanationItem,
    GenerationItem,
    StatementPair,
    dataset_stats,
    load_dataset,
    save_dataset,
)
from .estimators import CommonsenseValidator, ExplanationSelector, ReasonGenerator
from .generation import (
    DecodeConfig,
    batch_generate,
    decode_continuation,
    generate_reason,
    identity_baseline,
)
from .metrics import AccuracyReport, BleuReport, accuracy, corpus_bleu, per_example_bleu
from .plausibility import (
    PllChoiceScorer,
    apply_normalization,
    choose_plausible,
    enumerate_masked_variants,
    predict_nonsense,
    pseudo_log_likelihood,
)
from .text import (
    TokenSequence,
    ensure_terminal_period,
    sequence_for_text,
    tokenize_reference,
    wrap_special,
)
from .training import (
    BagOfTokensChoiceScorer,
    TrainingConfig,
    TrainingHistory,
    fine_tune,
    hyperparameter_sweep,
    lr_at_step,
)

__all__ = [
    "AccuracyReport",
    "BackendSet",
    "BagOfTokensChoiceScorer",
    "BleuReport",
    "ChoiceScorerBackend",
    "ChoiceSet",
    "CommonsenseValidator",
    "CountBigramGenerator",
    "CountMaskedLM",
    "CountPairClassifier",
    "DecodeConfig",
    "ExplanationItem",
    "ExplanationSelector",
    "GenerationItem",
    "GeneratorBackend",
    "MaskedLMBackend",
    "PairClassifierBackend",
    "PllChoiceScorer",
    "ReasonGenerator",
    "ServiceBackend",
    "StatementPair",
    "TokenSequence",
    "TrainingConfig",
    "TrainingHistory",
    "VocabDistribution",
    "accuracy",
    "apply_normalization",
    "batch_generate",
    "build_explanation_candidates",
    "build_validation_choices",
    "choose_plausible",
    "classify_validation",
    "concat_pair",
    "corpus_bleu",
    "dataset_stats",
    "decode_continuation",
    "enumerate_masked_variants",
    "ensure_terminal_period",
    "fine_tune",
    "generate_reason",
    "hyperparameter_sweep",
    "identity_baseline",
    "load_dataset",
    "lr_at_step",
    "per_example_bleu",
    "predict_nonsense",
    "pseudo_log_likelihood",
    "save_dataset",
    "select_choice",
    "select_explanation",
    "sequence_for_text",
    "serve_http",
    "serve_tcp",
    "tokenize_reference",
    "wrap_special",
]
