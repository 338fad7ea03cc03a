"""Command-line entry: train | evaluate | benchmark | gradcheck | ingest."""

from __future__ import annotations

import json
import logging
import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from pydantic import BaseModel, TypeAdapter, ValidationError
from rich import traceback
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from app import checkpoint, reports
from app.activations import ActivationKind
from app.configs import settings
from app.data import LabeledDataset, ingest_image_dir, load_datasets, write_idx
from app.diagnostics import dead_unit_census, gradcheck_network, gradcheck_scalar
from app.errors import ConfigError, DataError, NumericError, QReLULabError, ShapeError
from app.metrics import Timings, build_report
from app.network import Network, build
from app.schemas import (
    DeadUnitCensus,
    EvalReport,
    GradCheckReport,
    IngestConfig,
    ModelConfig,
    RunConfig,
    RunFailure,
)
from app.training import predict, train

logger = logging.getLogger("qrelu_lab")
console = Console(stderr=True)

# Samples fed to the dead-unit census after evaluation
CENSUS_SAMPLES = 256


class Evaluation(BaseModel):
    report: EvalReport
    census: DeadUnitCensus


def setup_logging() -> None:
    if settings.rich_tracebacks:
        traceback.install(console=console, show_locals=False)
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
    )


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(
    path: Path | None, overrides: Sequence[str] = (), seed: int | None = None
) -> RunConfig:
    """Config file, then `key.path=value` overrides, then --seed."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        *parents, leaf = key.split(".")
        node = raw
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"--set {key}: '{part}' is not a section")
            node = child
        node[leaf] = _parse_value(value)

    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def _fit_model(config: ModelConfig, dataset: LabeledDataset) -> ModelConfig:
    """Match the class count to the data; the image shape must already agree."""
    if dataset.image_shape != (config.input_h, config.input_w, config.input_c):
        raise ShapeError(
            f"Data images are {dataset.image_shape} but the model expects "
            f"{(config.input_h, config.input_w, config.input_c)}"
        )
    if dataset.num_classes == config.num_classes:
        return config
    logger.info(f"Using {dataset.num_classes} output classes from the data")
    try:
        return ModelConfig.model_validate(
            config.model_dump() | {"num_classes": dataset.num_classes}
        )
    except ValidationError as e:
        raise DataError(
            f"Data has {dataset.num_classes} class(es) {dataset.class_names}; "
            "a classifier needs at least 2"
        ) from e


def _run_one(
    run: RunConfig,
    kind: ActivationKind,
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    timing_comparable: bool = True,
) -> tuple[Network, EvalReport]:
    net = build(_fit_model(run.model_for(kind), train_set), run.seed)
    history = train(net, train_set, run.train_config())
    preds, eval_seconds = predict(net, test_set, run.train.batch_size)
    report = build_report(
        kind.value,
        test_set.labels,
        preds,
        Timings(history.total_seconds, eval_seconds),
        seed=run.seed,
        num_classes=net.config.num_classes,
        resamples=run.report.bootstrap_resamples,
        level=run.report.ci_level,
        timing_comparable=timing_comparable,
    )
    return net, report


def cmd_train(run: RunConfig, out: Path) -> tuple[Path, Path]:
    """Train the first configured activation; write model.ckpt and history.json."""
    kind = run.activation_kinds[0]
    train_set, _ = load_datasets(run.data, run.seed)
    net = build(_fit_model(run.model_for(kind), train_set), run.seed)
    history = train(net, train_set, run.train_config())

    ckpt_path = checkpoint.save(net, out / "model.ckpt")
    history_path = out / "history.json"
    history_path.write_text(history.model_dump_json(indent=2))
    logger.info(f"Wrote training history to {history_path}")
    return ckpt_path, history_path


def cmd_evaluate(run: RunConfig, checkpoint_path: Path, out: Path) -> Evaluation:
    net = checkpoint.load(checkpoint_path)
    _, test_set = load_datasets(run.data, run.seed)
    if test_set.image_shape != (net.config.input_h, net.config.input_w, net.config.input_c):
        raise ShapeError(
            f"Test images {test_set.image_shape} do not fit checkpoint {checkpoint_path}"
        )
    preds, eval_seconds = predict(net, test_set, run.train.batch_size)
    report = build_report(
        net.config.activation.value,
        test_set.labels,
        preds,
        Timings(0.0, eval_seconds),
        seed=run.seed,
        num_classes=net.config.num_classes,
        resamples=run.report.bootstrap_resamples,
        level=run.report.ci_level,
    )
    census = dead_unit_census(net, test_set.images[:CENSUS_SAMPLES])
    evaluation = Evaluation(report=report, census=census)

    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.json").write_text(evaluation.model_dump_json(indent=2))
    console.print(reports.render_table([report], title=f"Evaluation of {checkpoint_path}"))
    return evaluation


def cmd_benchmark(run: RunConfig, out: Path, parallel: bool = False) -> list[reports.SweepRow]:
    """Train and evaluate every configured activation from the same seed."""
    train_set, test_set = load_datasets(run.data, run.seed)
    kinds = run.activation_kinds

    def attempt(kind: ActivationKind) -> reports.SweepRow:
        try:
            _, report = _run_one(run, kind, train_set, test_set, timing_comparable=not parallel)
            return report
        except Exception as e:
            logger.warning(f"[{kind}] failed: {e}")
            return RunFailure(activation=kind.value, error=f"{type(e).__name__}: {e}")

    if parallel:
        logger.info("Running the sweep in parallel; timings are not comparable")
        with ThreadPoolExecutor(max_workers=min(len(kinds), settings.workers)) as pool:
            rows = list(pool.map(attempt, kinds))
    else:
        rows = [attempt(kind) for kind in kinds]

    if "csv" in run.report.formats:
        reports.write_csv(rows, out / "benchmark.csv")
    if "json" in run.report.formats:
        reports.write_json(rows, out / "benchmark.json")
    reports.write_comparison(
        reports.compare(rows, run.report.baseline.value), out / "comparison.json"
    )
    console.print(reports.render_table(rows))

    if all(isinstance(row, RunFailure) for row in rows):
        raise NumericError("Every activation in the sweep failed")
    return rows


def _gradcheck_table(results: Sequence[GradCheckReport]) -> Table:
    table = Table(title="Gradient checks")
    for column in ("check", "probes", "max rel err", "worst", "result"):
        table.add_column(column)
    for r in results:
        table.add_row(
            r.label,
            str(r.probes),
            f"{r.max_error:.2e}",
            r.worst or "-",
            "[green]pass" if r.passed else "[red]FAIL",
        )
    return table


def cmd_gradcheck(run: RunConfig, out: Path) -> list[GradCheckReport]:
    """Scalar and tiny-network gradient checks for every configured activation."""
    cfg = run.gradcheck
    results: list[GradCheckReport] = []
    for kind in run.activation_kinds:
        params = cfg.model.activation_params
        results.append(gradcheck_scalar(kind, params, cfg.scalar_probes, cfg.scalar_eps))
        model = cfg.model.model_copy(update={"activation": kind})
        results.append(gradcheck_network(model, run.seed, cfg.n_probes, cfg.eps))

    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_bytes(
        TypeAdapter(list[GradCheckReport]).dump_json(results, indent=2)
    )
    console.print(_gradcheck_table(results))
    failed = [r.label for r in results if not r.passed]
    if failed:
        raise NumericError(f"Gradient check failed for {', '.join(failed)}")
    return results


def cmd_ingest(src: Path, out: Path, config: IngestConfig) -> tuple[Path, Path]:
    """Ingest an image directory into an IDX pair `<out>-images-idx3-ubyte` / `-labels-idx1-ubyte`."""
    dataset = ingest_image_dir(src, config)
    return write_idx(
        dataset,
        out.with_name(f"{out.name}-images-idx3-ubyte"),
        out.with_name(f"{out.name}-labels-idx1-ubyte"),
    )


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field, e.g. --set train.epochs=1 (value parsed as JSON)",
    )
    common.add_argument("--out", type=Path, help="output directory (default: report.output_path)")

    parser = ArgumentParser(prog="qrelu-lab", description="QReLU / m-QReLU activation lab")
    subparsers = parser.add_subparsers(title="commands")

    train_parser = subparsers.add_parser("train", parents=[common], help="train one model")
    train_parser.set_defaults(func=lambda ns: cmd_train(_run(ns), _out(ns)))

    evaluate_parser = subparsers.add_parser(
        "evaluate", parents=[common], help="evaluate a checkpoint on the test data"
    )
    evaluate_parser.add_argument("--checkpoint", type=Path, required=True)
    evaluate_parser.set_defaults(
        func=lambda ns: cmd_evaluate(_run(ns), ns.checkpoint, _out(ns))
    )

    benchmark_parser = subparsers.add_parser(
        "benchmark", parents=[common], help="sweep activations and compare"
    )
    benchmark_parser.add_argument(
        "--parallel", action="store_true", help="train activations concurrently"
    )
    benchmark_parser.set_defaults(
        func=lambda ns: cmd_benchmark(_run(ns), _out(ns), ns.parallel)
    )

    gradcheck_parser = subparsers.add_parser(
        "gradcheck", parents=[common], help="finite-difference gradient checks"
    )
    gradcheck_parser.set_defaults(func=lambda ns: cmd_gradcheck(_run(ns), _out(ns)))

    ingest_parser = subparsers.add_parser(
        "ingest", parents=[common], help="convert an image directory to IDX files"
    )
    ingest_parser.add_argument("src", type=Path, help="directory of <class>/<image> files")
    ingest_parser.set_defaults(
        func=lambda ns: cmd_ingest(ns.src, _out(ns), _run(ns).data.ingest)
    )
    return parser


def _run(ns: Namespace) -> RunConfig:
    if not hasattr(ns, "run"):
        ns.run = load_run_config(ns.config, ns.overrides, ns.seed)
    return ns.run


def _out(ns: Namespace) -> Path:
    if ns.out is None and getattr(ns, "src", None) is not None:
        raise ConfigError("ingest needs --out PATH (prefix of the IDX files)")
    return ns.out if ns.out is not None else _run(ns).report.output_path


def main(argv: Sequence[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage()
        return 2
    try:
        args.func(args)
    except QReLULabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    return 0


__all__ = [
    "build_parser",
    "cmd_benchmark",
    "cmd_evaluate",
    "cmd_gradcheck",
    "cmd_ingest",
    "cmd_train",
    "load_run_config",
    "main",
]


if __name__ == "__main__":
    sys.exit(main())
