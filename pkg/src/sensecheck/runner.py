"""Config-driven runs: predict, persist, evaluate, compare.

A run resolves a RunConfig into an estimator, predicts over a dataset, and
writes a timestamped run directory containing

* ``config.snapshot``: the resolved config as canonical JSON,
* ``predictions.csv``: one row per example, byte-identical across reruns
  with the same config and seed,
* ``metrics.json``: metric report plus run metadata,
* ``log.txt``: human-readable trace.

Invalid configuration fails before the directory is created. Per-example
failures are recorded and the run continues; callers treat a non-empty
failure list as a nonzero exit.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

from . import __version__
from .backends.service import ServiceBackend
from .data import load_dataset, read_answers
from .estimators import (
    GENERATION_METHODS,
    VALIDATION_METHODS,
    CommonsenseValidator,
    ExplanationSelector,
    ReasonGenerator,
)
from .exceptions import DatasetError
from .generation import DecodeConfig
from .metrics import AccuracyReport, BleuReport, accuracy, corpus_bleu
from .plausibility import NORMALIZATION_MODES
from .training import TrainingConfig

OUTPUT_ROOT_ENV = "SENSECHECK_OUT"
DEFAULT_OUTPUT_ROOT = "runs"

_METHODS_BY_SUBTASK = {
    "A": VALIDATION_METHODS,
    "B": ("mc",),
    "C": GENERATION_METHODS,
}


class RunConfigError(ValueError):
    """The run cannot start; nothing has been written."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, resolvable from flags and/or a config file."""

    subtask: str
    method: str
    data_path: str
    answers_path: str | None = None
    backend: str | None = None
    normalization: str = "raw"
    content_only: bool = False
    smoothing_alpha: float = 1.0
    max_new_tokens: int = 30
    strategy: str = "greedy"
    temperature: float = 1.0
    top_k: int | None = None
    training: TrainingConfig | None = None
    out_dir: str | None = None
    seed: int = 0


@dataclass
class RunRecord:
    """What a finished run produced."""

    config: RunConfig
    run_dir: Path
    predictions: list[tuple[str, object]]
    metric_name: str | None
    metric: AccuracyReport | BleuReport | None
    failures: list[dict] = field(default_factory=list)
    ties: int = 0
    timing_seconds: float = 0.0
    version: str = __version__


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise RunConfigError(message)


def validate_config(config: RunConfig) -> str:
    """Check a RunConfig end to end; returns the normalized subtask letter."""
    subtask = str(config.subtask).upper()
    _require(subtask in _METHODS_BY_SUBTASK, f"unknown subtask {config.subtask!r}")
    _require(
        config.method in _METHODS_BY_SUBTASK[subtask],
        f"method {config.method!r} is not valid for subtask {subtask}; "
        f"choose from {_METHODS_BY_SUBTASK[subtask]}",
    )
    _require(
        config.normalization in NORMALIZATION_MODES,
        f"unknown normalization {config.normalization!r}",
    )
    _require(Path(config.data_path).is_file(), f"data path {config.data_path!r} does not exist")
    if config.answers_path is not None:
        _require(
            Path(config.answers_path).is_file(),
            f"answers path {config.answers_path!r} does not exist",
        )
    if config.method != "identity":
        _require(
            config.backend is not None,
            f"method {config.method!r} needs --backend count:CORPUS or service:URL",
        )
    if config.backend is not None:
        kind, _, rest = config.backend.partition(":")
        _require(
            kind in ("count", "service") and rest,
            f"backend spec {config.backend!r} is not count:CORPUS_PATH or service:URL",
        )
        if kind == "count":
            _require(Path(rest).is_file(), f"backend corpus {rest!r} does not exist")
    if subtask == "C":
        try:
            _decode_config(config)
        except ValueError as exc:
            raise RunConfigError(str(exc)) from None
    return subtask


def _decode_config(config: RunConfig) -> DecodeConfig:
    return DecodeConfig(
        max_new_tokens=config.max_new_tokens,
        strategy=config.strategy,
        temperature=config.temperature,
        top_k=config.top_k,
        seed=config.seed,
    )


def _resolve_backend(config: RunConfig) -> tuple[list[str] | None, object | None]:
    """(count corpus lines, prefit backend); at most one is non-None."""
    if config.backend is None:
        return None, None
    kind, _, rest = config.backend.partition(":")
    if kind == "count":
        lines = [ln.strip() for ln in Path(rest).read_text(encoding="utf-8").splitlines()]
        lines = [ln for ln in lines if ln]
        _require(bool(lines), f"backend corpus {rest!r} is empty")
        return lines, None
    return None, ServiceBackend(rest)


def _build_estimator(config: RunConfig, subtask: str):
    corpus, backend = _resolve_backend(config)
    if subtask == "A":
        estimator = CommonsenseValidator(
            method=config.method,
            normalization=config.normalization,
            content_only=config.content_only,
            alpha=config.smoothing_alpha,
            backend=backend,
        )
    elif subtask == "B":
        estimator = ExplanationSelector(
            normalization=config.normalization,
            content_only=config.content_only,
            alpha=config.smoothing_alpha,
            backend=backend,
        )
    else:
        estimator = ReasonGenerator(
            method=config.method,
            decode=_decode_config(config),
            alpha=config.smoothing_alpha,
            backend=backend,
        )
    return estimator.fit(corpus)


def output_root(config: RunConfig) -> Path:
    if config.out_dir:
        return Path(config.out_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def make_output_dir(out_dir: str | None, name: str) -> Path:
    """Create a fresh timestamped directory under the resolved output root."""
    root = Path(out_dir) if out_dir else Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    base = f"{name}-{stamp}"
    target = root / base
    suffix = 0
    while target.exists():
        suffix += 1
        target = root / f"{base}-{suffix}"
    target.mkdir()
    return target


def _make_run_dir(config: RunConfig, subtask: str) -> Path:
    return make_output_dir(config.out_dir, f"{subtask.lower()}-{config.method}")


def _snapshot(config: RunConfig) -> str:
    payload = asdict(config)
    payload["version"] = __version__
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def run(config: RunConfig) -> RunRecord:
    """Execute one configured run and persist its artifacts."""
    subtask = validate_config(config)
    started = time.perf_counter()
    estimator = _build_estimator(config, subtask)
    dataset = load_dataset(subtask, config.data_path, config.answers_path)

    predictions: list[tuple[str, object]] = []
    failures: list[dict] = []
    ties = 0
    log_lines = [f"run subtask={subtask} method={config.method} examples={len(dataset)}"]

    if subtask == "C":
        results, gen_failures = estimator.generate(dataset)
        predictions = list(results)
        for failure in gen_failures:
            failures.append({"id": failure.item_id, "error": failure.message})
            log_lines.append(f"FAIL {failure.item_id}: {failure.message}")
    else:
        for example in dataset:
            try:
                if subtask == "A":
                    label, tie = estimator.predict_one(example)
                else:
                    selection = estimator.select_one(example)
                    label, tie = selection.index, selection.tie
            except Exception as exc:
                failures.append({"id": example.id, "error": f"{type(exc).__name__}: {exc}"})
                log_lines.append(f"FAIL {example.id}: {exc}")
                label, tie = 0, False
            ties += int(tie)
            predictions.append((example.id, label))

    metric_name = None
    metric = None
    if subtask in ("A", "B"):
        gold = [
            example.nonsense_index if subtask == "A" else example.gold_index
            for example in dataset
        ]
        if all(g is not None for g in gold):
            metric_name = "accuracy"
            metric = accuracy([label for _, label in predictions], gold)
    else:
        if all(example.references for example in dataset):
            metric_name = "bleu"
            metric = corpus_bleu(
                [text for _, text in predictions],
                [example.references for example in dataset],
                ids=[example.id for example in dataset],
            )

    timing = time.perf_counter() - started
    run_dir = _make_run_dir(config, subtask)
    (run_dir / "config.snapshot").write_text(_snapshot(config), encoding="utf-8")

    with open(run_dir / "predictions.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "candidate" if subtask == "C" else "prediction"])
        writer.writerows(predictions)

    payload = {
        "subtask": subtask,
        "method": config.method,
        "metric_name": metric_name,
        "metric": metric.as_dict() if metric is not None else None,
        "ties": ties,
        "failures": len(failures),
        "examples": len(dataset),
        "timing_seconds": round(timing, 6),
        "version": __version__,
    }
    (run_dir / "metrics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    if metric is not None:
        log_lines.append(f"{metric_name}: {metric.as_dict()}")
    log_lines.append(f"failures: {len(failures)}  ties: {ties}  seconds: {timing:.3f}")
    (run_dir / "log.txt").write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    return RunRecord(
        config=config,
        run_dir=run_dir,
        predictions=predictions,
        metric_name=metric_name,
        metric=metric,
        failures=failures,
        ties=ties,
        timing_seconds=timing,
    )


def read_predictions(path) -> list[tuple[str, str]]:
    """Parse a predictions.csv written by run()."""
    path = Path(path)
    rows: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) != 2 or header[0] != "id":
            raise DatasetError(f"{path}: expected a two-column predictions file with an id header")
        for fields in reader:
            if not fields:
                continue
            if len(fields) != 2:
                raise DatasetError(f"{path}: line {reader.line_num}: expected id,value")
            rows.append((fields[0], fields[1]))
    if not rows:
        raise DatasetError(f"{path}: no predictions")
    return rows


def evaluate(predictions_path, gold_path, subtask: str) -> dict:
    """Score a predictions file against a gold answers file."""
    subtask = str(subtask).upper()
    _require(subtask in _METHODS_BY_SUBTASK, f"unknown subtask {subtask!r}")
    predictions = read_predictions(predictions_path)
    gold = read_answers(gold_path, subtask)

    predicted_ids = [ex_id for ex_id, _ in predictions]
    missing = [i for i in predicted_ids if i not in gold]
    extra = [i for i in gold if i not in set(predicted_ids)]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"predictions without gold: {', '.join(missing[:5])}")
        if extra:
            parts.append(f"gold without predictions: {', '.join(extra[:5])}")
        raise DatasetError("id mismatch between predictions and gold; " + "; ".join(parts))

    if subtask in ("A", "B"):
        upper = 2 if subtask == "A" else 3
        parsed = []
        for ex_id, raw in predictions:
            try:
                value = int(raw)
            except ValueError:
                raise DatasetError(f"prediction for {ex_id!r} is not an integer: {raw!r}") from None
            if not 0 <= value < upper:
                raise DatasetError(f"prediction for {ex_id!r} outside [0, {upper}): {value}")
            parsed.append(value)
        report = accuracy(parsed, [gold[i] for i in predicted_ids])
        metric_name = "accuracy"
    else:
        report = corpus_bleu(
            [text for _, text in predictions],
            [gold[i] for i in predicted_ids],
            ids=predicted_ids,
        )
        metric_name = "bleu"
    return {"subtask": subtask, "metric_name": metric_name, "metric": report.as_dict()}


def _metric_value(metrics_payload: dict) -> float:
    metric = metrics_payload.get("metric") or {}
    name = metrics_payload.get("metric_name")
    key = "accuracy" if name == "accuracy" else "score"
    value = metric.get(key)
    if value is None:
        raise RunConfigError("run has no stored metric to compare")
    return float(value)


def compare(run_dirs: Sequence[str]) -> list[dict]:
    """Rank finished runs of the same subtask by their stored metric."""
    _require(len(run_dirs) >= 2, "compare needs at least two run directories")
    rows = []
    for run_dir in run_dirs:
        directory = Path(run_dir)
        metrics_path = directory / "metrics.json"
        snapshot_path = directory / "config.snapshot"
        _require(metrics_path.is_file(), f"{run_dir!r} has no metrics.json")
        _require(snapshot_path.is_file(), f"{run_dir!r} has no config.snapshot")
        payload = json.loads(metrics_path.read_text(encoding="utf-8"))
        rows.append(
            {
                "run": str(run_dir),
                "subtask": payload.get("subtask"),
                "method": payload.get("method"),
                "metric_name": payload.get("metric_name"),
                "value": _metric_value(payload),
            }
        )
    subtasks = {row["subtask"] for row in rows}
    _require(
        len(subtasks) == 1,
        f"cannot compare runs across subtasks: {sorted(str(s) for s in subtasks)}",
    )
    return sorted(rows, key=lambda row: -row["value"])
