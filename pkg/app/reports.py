"""Sweep report files and cross-activation comparisons."""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from pathlib import Path

from pydantic import BaseModel, Field, TypeAdapter, ValidationError
from rich.table import Table

from app.errors import DataError
from app.schemas import EvalReport, MetricWithCI, RunFailure

logger = logging.getLogger("reports")

SweepRow = EvalReport | RunFailure

# metric field -> CSV prefix of its interval columns
_CI_PREFIX = {"accuracy": "acc", "precision_w": "prec", "recall_w": "rec", "f1_w": "f1"}
METRICS = tuple(_CI_PREFIX)

CSV_COLUMNS = (
    "activation",
    "train_seconds",
    "eval_seconds",
    "total_seconds",
    *(
        column
        for metric, prefix in _CI_PREFIX.items()
        for column in (metric, f"{prefix}_ci_lo", f"{prefix}_ci_hi")
    ),
)

_ROWS = TypeAdapter(list[SweepRow])


class Comparison(BaseModel):
    """Gains and cost of every activation relative to a baseline."""

    baseline: str
    # activation -> metric -> percent change of the point estimate
    gains: dict[str, dict[str, float | None]] = Field(default_factory=dict)
    cost_ratios: dict[str, float | None] = Field(default_factory=dict)
    failed: list[str] = Field(default_factory=list)


def format_cell(metric: MetricWithCI) -> str:
    return f"{metric.value:.2f} ({metric.ci_lo:.2f}-{metric.ci_hi:.2f})"


def _to_row(report: SweepRow) -> dict[str, str]:
    if isinstance(report, RunFailure):
        return {"activation": report.activation}
    row = {
        "activation": report.activation,
        "train_seconds": repr(report.train_seconds),
        "eval_seconds": repr(report.eval_seconds),
        "total_seconds": repr(report.total_seconds),
    }
    for metric, prefix in _CI_PREFIX.items():
        cell: MetricWithCI = getattr(report, metric)
        row[metric] = repr(cell.value)
        row[f"{prefix}_ci_lo"] = repr(cell.ci_lo)
        row[f"{prefix}_ci_hi"] = repr(cell.ci_hi)
    return row


def _from_row(row: dict[str, str]) -> SweepRow:
    if not row.get("accuracy"):
        return RunFailure(activation=row["activation"], error="failed (see JSON report)")
    return EvalReport(
        activation=row["activation"],
        train_seconds=float(row["train_seconds"]),
        eval_seconds=float(row["eval_seconds"]),
        total_seconds=float(row["total_seconds"]),
        **{
            metric: MetricWithCI(
                value=float(row[metric]),
                ci_lo=float(row[f"{prefix}_ci_lo"]),
                ci_hi=float(row[f"{prefix}_ci_hi"]),
            )
            for metric, prefix in _CI_PREFIX.items()
        },
    )


def write_csv(reports: Sequence[SweepRow], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, restval="")
        writer.writeheader()
        writer.writerows(_to_row(report) for report in reports)
    logger.info(f"Wrote {len(reports)} rows to {path}")
    return path


def _restore_from_json(rows: list[SweepRow], companion: Path) -> list[SweepRow]:
    """Fill in what the CSV columns cannot carry: timing_comparable and failure messages."""
    by_activation = {row.activation: row for row in read_json(companion)}
    restored: list[SweepRow] = []
    for row in rows:
        full = by_activation.get(row.activation)
        if isinstance(row, EvalReport) and isinstance(full, EvalReport):
            row = row.model_copy(update={"timing_comparable": full.timing_comparable})
        elif isinstance(row, RunFailure) and isinstance(full, RunFailure):
            row = full
        restored.append(row)
    return restored


def read_csv(path: Path | str) -> list[SweepRow]:
    """Read a sweep CSV.

    The columns hold no `timing_comparable` flag or error text. Both are taken
    from the JSON report of the same name when one exists; otherwise rows count
    as comparable and failures read "failed (see JSON report)".
    """
    path = Path(path)
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise DataError(f"{path}: unexpected CSV header {reader.fieldnames}")
        try:
            rows = [_from_row(row) for row in reader]
        except (ValueError, ValidationError) as e:
            raise DataError(f"{path}: malformed report row: {e}") from e
    companion = path.with_suffix(".json")
    return _restore_from_json(rows, companion) if companion.exists() else rows


def write_json(reports: Sequence[SweepRow], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_ROWS.dump_json(list(reports), indent=2))
    logger.info(f"Wrote {len(reports)} reports to {path}")
    return path


def read_json(path: Path | str) -> list[SweepRow]:
    path = Path(path)
    try:
        return _ROWS.validate_json(path.read_bytes())
    except ValidationError as e:
        raise DataError(f"{path}: malformed report file: {e}") from e


def _baseline(reports: Sequence[SweepRow], baseline: str) -> EvalReport | None:
    for report in reports:
        if isinstance(report, EvalReport) and report.activation == baseline:
            return report
    logger.warning(f"Baseline '{baseline}' has no successful report")
    return None


def relative_gains(
    reports: Sequence[SweepRow], baseline: str
) -> dict[str, dict[str, float | None]]:
    """Percent change of each point metric against the baseline activation.

    None marks a metric whose baseline value is 0, or a missing baseline.
    """
    base = _baseline(reports, baseline)
    gains: dict[str, dict[str, float | None]] = {}
    for report in reports:
        if not isinstance(report, EvalReport):
            continue
        row: dict[str, float | None] = {}
        for metric in METRICS:
            ref = getattr(base, metric).value if base else 0.0
            value = getattr(report, metric).value
            row[metric] = 100.0 * (value - ref) / ref if ref else None
        gains[report.activation] = row
    return gains


def cost_ratios(reports: Sequence[SweepRow], baseline: str) -> dict[str, float | None]:
    """total_seconds of each activation divided by the baseline's."""
    base = _baseline(reports, baseline)
    ref = base.total_seconds if base else 0.0
    return {
        report.activation: report.total_seconds / ref if ref else None
        for report in reports
        if isinstance(report, EvalReport)
    }


def compare(reports: Sequence[SweepRow], baseline: str) -> Comparison:
    return Comparison(
        baseline=baseline,
        gains=relative_gains(reports, baseline),
        cost_ratios=cost_ratios(reports, baseline),
        failed=[r.activation for r in reports if isinstance(r, RunFailure)],
    )


def write_comparison(comparison: Comparison, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(comparison.model_dump_json(indent=2))
    return path


def render_table(reports: Sequence[SweepRow], title: str = "Activation sweep") -> Table:
    table = Table(title=title)
    table.add_column("activation", style="bold")
    for metric in METRICS:
        table.add_column(metric, justify="right")
    table.add_column("time (s)", justify="right")
    for report in reports:
        if isinstance(report, RunFailure):
            table.add_row(report.activation, *(["-"] * len(METRICS)), f"[red]{report.error}")
            continue
        table.add_row(
            report.activation,
            *(format_cell(getattr(report, metric)) for metric in METRICS),
            f"{report.total_seconds:.1f}" + ("" if report.timing_comparable else "*"),
        )
    return table


def load_reports(path: Path | str) -> list[SweepRow]:
    """Read a sweep file by extension."""
    path = Path(path)
    match path.suffix:
        case ".csv":
            return read_csv(path)
        case ".json":
            return read_json(path)
        case _:
            raise DataError(f"Unknown report format '{path.suffix}'")


__all__ = [
    "CSV_COLUMNS",
    "Comparison",
    "METRICS",
    "SweepRow",
    "compare",
    "cost_ratios",
    "format_cell",
    "load_reports",
    "read_csv",
    "read_json",
    "relative_gains",
    "render_table",
    "write_comparison",
    "write_csv",
    "write_json",
]
