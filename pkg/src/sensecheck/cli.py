"""Command-line runner.

Subcommands: validate-a, explain-b, generate-c, evaluate, train, sweep,
compare, dataset-stats. Options can also come from a YAML config file
passed with --config; explicit command-line flags win over file values.
Exit codes: 0 success, 1 completed with per-example failures, 2 invalid
usage or configuration (in which case no run directory is created). The
default output root is ./runs, or $SENSECHECK_OUT when set.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import click
import yaml

from . import __version__
from .backends.base import TokenizerMixin
from .choice import build_explanation_candidates, build_validation_choices
from .data import dataset_stats, load_dataset
from .exceptions import DatasetError, ServiceProtocolError
from .runner import (
    RunConfig,
    RunConfigError,
    compare as compare_runs,
    evaluate as evaluate_files,
    make_output_dir,
    run,
)
from .training import (
    LEARNING_RATE_GRID,
    BagOfTokensChoiceScorer,
    TrainingConfig,
    hyperparameter_sweep,
)

_NORMALIZATIONS = ("raw", "length-root", "perplexity")


def _norm(value: str) -> str:
    return value.replace("-", "_")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise click.UsageError(f"cannot read config file {path!r}: {exc}")
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise click.UsageError(f"config file {path!r} must be a key-value mapping")
    flat: dict = {}
    for key, value in loaded.items():
        if isinstance(value, dict):
            # One nesting level groups related keys; the group name itself
            # is decorative (for example decode: {temperature: 0.3}).
            flat.update(value)
        else:
            flat[key] = value
    return flat


def _merge_config(ctx: click.Context, file_values: dict, params: dict) -> dict:
    """File values fill in anything not given explicitly on the command line."""
    known = set(params)
    unknown = [k for k in file_values if k not in known]
    if unknown:
        raise click.UsageError(f"unknown config file key(s): {', '.join(sorted(unknown))}")
    merged = dict(params)
    for key, value in file_values.items():
        if ctx.get_parameter_source(key) == click.core.ParameterSource.DEFAULT:
            merged[key] = value
    return merged


def _require_option(value, flag: str):
    if value is None:
        raise click.UsageError(f"missing required option {flag} (flag or config file)")
    return value


def _finish_run(config: RunConfig) -> None:
    try:
        record = run(config)
    except (RunConfigError, DatasetError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except ServiceProtocolError as exc:
        click.echo(f"service failure: {exc}", err=True)
        sys.exit(1)
    click.echo(f"run directory: {record.run_dir}")
    if record.metric is not None:
        click.echo(f"{record.metric_name}: {json.dumps(record.metric.as_dict())}")
    if record.failures:
        click.echo(f"{len(record.failures)} example(s) failed; see log.txt", err=True)
        sys.exit(1)


def _io_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="YAML config file; flags override its values."),
        click.option("--data", "data_path", type=click.Path(), default=None,
                     help="Dataset csv."),
        click.option("--answers", "answers_path", type=click.Path(), default=None,
                     help="Answers file (labels or references)."),
        click.option("--out", "out_dir", type=click.Path(), default=None,
                     help="Output root (default ./runs or $SENSECHECK_OUT)."),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _common_options(f):
    f = click.option("--backend", default=None, help="count:CORPUS_PATH or service:URL.")(f)
    return _io_options(f)


@click.group()
@click.version_option(version=__version__, prog_name="sensecheck")
def main():
    """Validate, explain, and generate around common sense at desk scale."""


@main.command("validate-a")
@_common_options
@click.option("--method", type=click.Choice(["mlm", "classify", "mc"]), default="mlm",
              show_default=True)
@click.option("--normalization", type=click.Choice(_NORMALIZATIONS), default="raw",
              show_default=True)
@click.option("--content-only", is_flag=True, default=False,
              help="Mask only interior tokens, not the begin/end markers.")
@click.option("--alpha", type=float, default=1.0, show_default=True,
              help="Count-backend smoothing weight.")
@click.pass_context
def validate_a(ctx, config_path, **params):
    """Predict which statement of each pair is against common sense."""
    params = _merge_config(ctx, _load_config_file(config_path), params)
    config = RunConfig(
        subtask="A",
        method=params["method"],
        data_path=_require_option(params["data_path"], "--data"),
        answers_path=params["answers_path"],
        backend=params["backend"],
        normalization=_norm(params["normalization"]),
        content_only=params["content_only"],
        smoothing_alpha=params["alpha"],
        out_dir=params["out_dir"],
        seed=params["seed"],
    )
    _finish_run(config)


@main.command("explain-b")
@_common_options
@click.option("--normalization", type=click.Choice(_NORMALIZATIONS), default="raw",
              show_default=True)
@click.option("--content-only", is_flag=True, default=False)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.pass_context
def explain_b(ctx, config_path, **params):
    """Select which of three reasons explains why a statement is false."""
    params = _merge_config(ctx, _load_config_file(config_path), params)
    config = RunConfig(
        subtask="B",
        method="mc",
        data_path=_require_option(params["data_path"], "--data"),
        answers_path=params["answers_path"],
        backend=params["backend"],
        normalization=_norm(params["normalization"]),
        content_only=params["content_only"],
        smoothing_alpha=params["alpha"],
        out_dir=params["out_dir"],
        seed=params["seed"],
    )
    _finish_run(config)


@main.command("generate-c")
@_common_options
@click.option("--method", type=click.Choice(["identity", "lm"]), default="lm",
              show_default=True)
@click.option("--max-new-tokens", type=int, default=30, show_default=True)
@click.option("--strategy", type=click.Choice(["greedy", "sample"]), default="greedy",
              show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--top-k", type=int, default=None, help="Sample from the k most likely tokens.")
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.pass_context
def generate_c(ctx, config_path, **params):
    """Generate a reason for each false statement."""
    params = _merge_config(ctx, _load_config_file(config_path), params)
    config = RunConfig(
        subtask="C",
        method=params["method"],
        data_path=_require_option(params["data_path"], "--data"),
        answers_path=params["answers_path"],
        backend=params["backend"],
        smoothing_alpha=params["alpha"],
        max_new_tokens=params["max_new_tokens"],
        strategy=params["strategy"],
        temperature=params["temperature"],
        top_k=params["top_k"],
        out_dir=params["out_dir"],
        seed=params["seed"],
    )
    _finish_run(config)


@main.command()
@click.option("--predictions", "predictions_path", type=click.Path(), required=True)
@click.option("--gold", "gold_path", type=click.Path(), required=True)
@click.option("--subtask", type=click.Choice(["A", "B", "C"], case_sensitive=False), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report JSON here.")
def evaluate(predictions_path, gold_path, subtask, out_path):
    """Score a predictions file against gold answers."""
    try:
        report = evaluate_files(predictions_path, gold_path, subtask)
    except (RunConfigError, DatasetError, OSError, ValueError) as exc:
        raise click.UsageError(str(exc))
    text = json.dumps(report, indent=2, sort_keys=True)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")


@main.command()
@click.argument("run_dirs", nargs=-1, type=click.Path())
@click.option("--json", "as_json", is_flag=True, default=False, help="Print JSON instead of a table.")
def compare(run_dirs, as_json):
    """Rank finished run directories of one subtask by their metric."""
    try:
        rows = compare_runs(list(run_dirs))
    except (RunConfigError, DatasetError, OSError, ValueError, json.JSONDecodeError) as exc:
        raise click.UsageError(str(exc))
    if as_json:
        click.echo(json.dumps(rows, indent=2))
        return
    width = max(len(row["run"]) for row in rows)
    click.echo(f"{'run'.ljust(width)}  method    metric    value")
    for row in rows:
        click.echo(
            f"{row['run'].ljust(width)}  {str(row['method']).ljust(8)}  "
            f"{str(row['metric_name']).ljust(8)}  {row['value']:.4f}"
        )


@main.command("dataset-stats")
@click.option("--kind", type=click.Choice(["A", "B", "C"], case_sensitive=False), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--answers", "answers_path", type=click.Path(), default=None)
def dataset_stats_command(kind, data_path, answers_path):
    """Print summary statistics for a dataset."""
    try:
        examples = load_dataset(kind, data_path, answers_path)
        stats = dataset_stats(kind, examples)
    except (DatasetError, OSError, ValueError) as exc:
        raise click.UsageError(str(exc))
    click.echo(json.dumps(stats, indent=2, sort_keys=True))


def _training_options(f):
    options = [
        click.option("--subtask", type=click.Choice(["A", "B"], case_sensitive=False), default="A",
                     show_default=True),
        click.option("--eval-data", "eval_data_path", type=click.Path(), default=None),
        click.option("--eval-answers", "eval_answers_path", type=click.Path(), default=None),
        click.option("--batch-size", type=int, default=16, show_default=True),
        click.option("--learning-rate", type=float, default=1e-5, show_default=True),
        click.option("--weight-decay", type=float, default=0.1, show_default=True),
        click.option("--adam-epsilon", type=float, default=1e-8, show_default=True),
        click.option("--epochs", "num_train_epochs", type=int, default=5, show_default=True),
        click.option("--max-steps", type=int, default=5336, show_default=True),
        click.option("--warmup-steps", type=int, default=320, show_default=True),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _choice_sets(kind: str, data_path, answers_path):
    tokenizer = TokenizerMixin()
    examples = load_dataset(kind, data_path, answers_path)
    if kind == "A":
        return [build_validation_choices(pair, tokenizer) for pair in examples]
    return [build_explanation_candidates(item, tokenizer) for item in examples]


def _training_config(params, seed) -> TrainingConfig:
    try:
        return TrainingConfig(
            batch_size=params["batch_size"],
            learning_rate=params["learning_rate"],
            weight_decay=params["weight_decay"],
            adam_epsilon=params["adam_epsilon"],
            num_train_epochs=params["num_train_epochs"],
            max_steps=params["max_steps"],
            warmup_steps=params["warmup_steps"],
            seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))


@main.command()
@_io_options
@_training_options
@click.pass_context
def train(ctx, config_path, **params):
    """Fine-tune the bag-of-tokens choice scorer on labeled pairs or items."""
    params = _merge_config(ctx, _load_config_file(config_path), params)
    kind = params["subtask"].upper()
    data_path = _require_option(params["data_path"], "--data")
    answers_path = _require_option(params["answers_path"], "--answers")
    config = _training_config(params, params["seed"])
    try:
        train_sets = _choice_sets(kind, data_path, answers_path)
        scorer = BagOfTokensChoiceScorer(config=config).fit(train_sets)
    except (DatasetError, ValueError, RuntimeError) as exc:
        raise click.UsageError(str(exc))
    out = make_output_dir(params["out_dir"], f"train-{kind.lower()}")
    scorer.history_.save(out / "history.csv", out / "summary.json")
    snapshot = {"command": "train", "subtask": kind, "data": str(data_path),
                "answers": str(answers_path), "training": asdict(config),
                "version": __version__}
    (out / "config.snapshot").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    message = {"run_dir": str(out), "steps_run": scorer.history_.steps_run,
               "final_loss": scorer.history_.final_loss}
    if params["eval_data_path"]:
        eval_sets = _choice_sets(
            kind, params["eval_data_path"],
            _require_option(params["eval_answers_path"], "--eval-answers"),
        )
        message["eval_accuracy"] = scorer.score(eval_sets)
    click.echo(json.dumps(message, indent=2, sort_keys=True))


@main.command()
@_io_options
@_training_options
@click.option("--learning-rates", default=",".join(str(lr) for lr in LEARNING_RATE_GRID),
              show_default=True, help="Comma-separated peak learning rates to try.")
@click.pass_context
def sweep(ctx, config_path, **params):
    """Rank peak learning rates by eval accuracy of the trained scorer."""
    params = _merge_config(ctx, _load_config_file(config_path), params)
    kind = params["subtask"].upper()
    data_path = _require_option(params["data_path"], "--data")
    answers_path = _require_option(params["answers_path"], "--answers")
    eval_data = _require_option(params["eval_data_path"], "--eval-data")
    eval_answers = _require_option(params["eval_answers_path"], "--eval-answers")
    base = _training_config(params, params["seed"])
    try:
        rates = [float(v) for v in str(params["learning_rates"]).split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"cannot parse --learning-rates {params['learning_rates']!r}")
    if not rates:
        raise click.UsageError("--learning-rates is empty")
    try:
        grid = [replace(base, learning_rate=rate) for rate in rates]
        train_sets = _choice_sets(kind, data_path, answers_path)
        eval_sets = _choice_sets(kind, eval_data, eval_answers)
        results = hyperparameter_sweep(BagOfTokensChoiceScorer(), grid, train_sets, eval_sets)
    except (DatasetError, ValueError, RuntimeError) as exc:
        raise click.UsageError(str(exc))
    out = make_output_dir(params["out_dir"], f"sweep-{kind.lower()}")
    payload = [result.as_dict() for result in results]
    (out / "sweep.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(f"run directory: {out}")
    click.echo("rank  learning_rate  accuracy")
    for rank, result in enumerate(results, start=1):
        click.echo(f"{rank:<4}  {result.config.learning_rate:<13g}  {result.accuracy:.4f}")


if __name__ == "__main__":
    main()
