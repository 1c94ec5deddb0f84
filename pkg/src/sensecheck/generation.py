"""Reason generation by autoregressive decoding, plus the identity baseline.

The decoder conditions on the period-normalized false statement and emits
one token at a time, greedily or by temperature/top-k sampling, until it
hits a stop token or the length cap. The continuation is never empty: a
generation that stops immediately falls back to ".". The identity baseline
returns the statement itself, which sets a surprisingly strong BLEU floor
because references often restate much of the statement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import GeneratorBackend, VocabDistribution
from .data import GenerationItem
from .exceptions import GenerationError
from .text import ensure_terminal_period
from .validation import check_choice

DECODE_STRATEGIES = ("greedy", "sample")

FALLBACK_TEXT = "."


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding knobs.

    The stop set always also includes the backend's end-of-text token.
    ``top_k`` of None means no truncation.
    """

    max_new_tokens: int = 30
    strategy: str = "greedy"
    temperature: float = 1.0
    top_k: int | None = None
    seed: int = 0
    stop_tokens: frozenset[str] = frozenset({"."})

    def __post_init__(self):
        check_choice(self.strategy, DECODE_STRATEGIES, "strategy")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"top_k must be >= 1 or None, got {self.top_k}")
        object.__setattr__(self, "stop_tokens", frozenset(self.stop_tokens))


def _pick_token(dist: VocabDistribution, config: DecodeConfig, rng: np.random.Generator | None) -> str:
    if config.strategy == "greedy":
        return dist.argmax()
    # Sampling works on sorted (token, prob) pairs so identical seeds give
    # identical draws regardless of dict ordering upstream.
    ranked = sorted(dist.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))
    if config.top_k is not None:
        ranked = ranked[: config.top_k]
    # Temperature in log space: p^(1/T) renormalized, computed stably by
    # shifting before exp so tiny temperatures do not overflow.
    logits = np.array([math.log(max(p, 1e-300)) / config.temperature for _, p in ranked])
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    return ranked[int(rng.choice(len(ranked), p=weights))][0]


def decode_continuation(
    prompt: Sequence[str],
    backend: GeneratorBackend,
    config: DecodeConfig = DecodeConfig(),
    rng: np.random.Generator | None = None,
) -> str:
    """Decode a continuation of the given prompt tokens.

    ``rng`` lets a batch share one seeded stream; by default each call
    seeds its own from ``config.seed``. A backend failure mid-decode is
    re-raised as GenerationError carrying the partial text.
    """
    if not prompt:
        raise ValueError("prompt must contain at least one token")
    if rng is None and config.strategy == "sample":
        rng = np.random.default_rng(config.seed)
    prefix = list(prompt)
    generated: list[str] = []

    def _partial() -> str:
        visible = [t for t in generated if t != backend.eot_token]
        return backend.detokenize(visible)

    for _ in range(config.max_new_tokens):
        try:
            dist = backend.next_token_distribution(prefix)
            token = _pick_token(dist, config, rng)
        except Exception as exc:
            raise GenerationError(
                f"decoding failed after {len(generated)} token(s): {exc}",
                partial_text=_partial(),
            ) from exc
        prefix.append(token)
        generated.append(token)
        if token == backend.eot_token or token in config.stop_tokens:
            break
    text = _partial()
    return text if text else FALLBACK_TEXT


def generate_reason(
    statement: str,
    backend: GeneratorBackend,
    config: DecodeConfig = DecodeConfig(),
    rng: np.random.Generator | None = None,
) -> str:
    """Decode a reason for a false statement, prompting with the statement."""
    prompt = backend.tokenize(ensure_terminal_period(statement))
    return decode_continuation(prompt, backend, config, rng=rng)


def identity_baseline(statement: str) -> str:
    """Return the (period-normalized) statement itself as the reason."""
    return ensure_terminal_period(statement)


@dataclass(frozen=True)
class GenerationFailure:
    item_id: str
    message: str
    partial_text: str


def batch_generate(
    items: Sequence[GenerationItem],
    backend: GeneratorBackend | None,
    config: DecodeConfig = DecodeConfig(),
    method: str = "lm",
) -> tuple[list[tuple[str, str]], list[GenerationFailure]]:
    """Generate one reason per item, collecting per-item failures.

    A failed item contributes the fallback "." so the output stays aligned
    with the input; callers decide what a nonzero failure count means
    (the command line exits 1).
    """
    check_choice(method, ("identity", "lm"), "method")
    if not items:
        raise ValueError("no items to generate for")
    if method == "lm" and backend is None:
        raise ValueError("lm generation requires a generator backend")
    rng = np.random.default_rng(config.seed) if config.strategy == "sample" else None
    results: list[tuple[str, str]] = []
    failures: list[GenerationFailure] = []
    for item in items:
        try:
            if method == "identity":
                candidate = identity_baseline(item.false_statement)
            else:
                candidate = generate_reason(item.false_statement, backend, config, rng=rng)
        except GenerationError as exc:
            failures.append(GenerationFailure(item.id, str(exc), exc.partial_text))
            candidate = exc.partial_text or FALLBACK_TEXT
        results.append((item.id, candidate))
    return results, failures
