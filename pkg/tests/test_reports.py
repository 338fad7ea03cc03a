import pytest
from rich.console import Console

from app.errors import DataError
from app.reports import (
    CSV_COLUMNS,
    compare,
    cost_ratios,
    format_cell,
    load_reports,
    read_csv,
    read_json,
    relative_gains,
    render_table,
    write_comparison,
    write_csv,
    write_json,
)
from app.schemas import EvalReport, MetricWithCI, RunFailure

HEADER = (
    "activation,train_seconds,eval_seconds,total_seconds,accuracy,acc_ci_lo,acc_ci_hi,"
    "precision_w,prec_ci_lo,prec_ci_hi,recall_w,rec_ci_lo,rec_ci_hi,f1_w,f1_ci_lo,f1_ci_hi"
)


def make_report(activation: str, accuracy: float, train_seconds: float) -> EvalReport:
    cell = MetricWithCI(value=accuracy, ci_lo=accuracy - 0.01, ci_hi=min(1.0, accuracy + 0.01))
    return EvalReport(
        activation=activation,
        accuracy=cell,
        precision_w=cell,
        recall_w=cell,
        f1_w=cell,
        train_seconds=train_seconds,
        eval_seconds=0.25,
        total_seconds=train_seconds + 0.25,
    )


@pytest.fixture
def sweep():
    return [
        make_report("relu", 0.8, 9.75),
        make_report("qrelu", 0.88, 39.75),
        RunFailure(activation="softmax", error="NonFiniteLossError: loss became nan"),
    ]


def test_csv_header_is_exact(tmp_path, sweep):
    path = write_csv(sweep, tmp_path / "benchmark.csv")
    assert ",".join(CSV_COLUMNS) == HEADER
    lines = path.read_text().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 4
    assert lines[3].startswith("softmax,")


def test_csv_reads_back(tmp_path, sweep):
    rows = read_csv(write_csv(sweep, tmp_path / "b.csv"))
    assert rows[:2] == sweep[:2]
    assert isinstance(rows[2], RunFailure)
    assert [format_cell(r.accuracy) for r in rows[:2]] == ["0.80 (0.79-0.81)", "0.88 (0.87-0.89)"]


def test_json_roundtrip_keeps_failures(tmp_path, sweep):
    assert read_json(write_json(sweep, tmp_path / "b.json")) == sweep
    assert load_reports(tmp_path / "b.json") == sweep


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("activation,accuracy\nrelu,0.5\n")
    with pytest.raises(DataError, match="header"):
        read_csv(bad)
    with pytest.raises(DataError):
        load_reports(tmp_path / "report.xml")


def test_format_cell():
    assert format_cell(MetricWithCI(value=0.99, ci_lo=0.98, ci_hi=1.0)) == "0.99 (0.98-1.00)"
    assert format_cell(MetricWithCI(value=1.0, ci_lo=1.0, ci_hi=1.0)) == "1.00 (1.00-1.00)"


def test_relative_gains(sweep):
    gains = relative_gains(sweep, "relu")
    assert gains["relu"]["accuracy"] == 0.0
    assert gains["qrelu"]["accuracy"] == pytest.approx(10.0)
    assert "softmax" not in gains


def test_cost_ratios(sweep):
    ratios = cost_ratios(sweep, "relu")
    assert ratios == {"relu": 1.0, "qrelu": pytest.approx(4.0)}


def test_missing_baseline(sweep):
    assert relative_gains(sweep, "elu")["qrelu"]["accuracy"] is None
    assert cost_ratios(sweep, "elu")["relu"] is None


def test_comparison_file(tmp_path, sweep):
    comparison = compare(sweep, "relu")
    assert comparison.failed == ["softmax"]
    path = write_comparison(comparison, tmp_path / "comparison.json")
    assert type(comparison).model_validate_json(path.read_text()) == comparison


def test_render_table(sweep):
    console = Console(record=True, width=160)
    console.print(render_table(sweep))
    text = console.export_text()
    assert "qrelu" in text
    assert "0.88 (0.87-0.89)" in text
    assert "NonFiniteLossError" in text


def test_csv_takes_flags_and_errors_from_json_report(tmp_path, sweep):
    parallel = [
        row.model_copy(update={"timing_comparable": False}) if isinstance(row, EvalReport) else row
        for row in sweep
    ]
    write_csv(parallel, tmp_path / "benchmark.csv")
    # CSV alone has no column for the flag
    assert all(r.timing_comparable for r in read_csv(tmp_path / "benchmark.csv")[:2])

    write_json(parallel, tmp_path / "benchmark.json")
    rows = read_csv(tmp_path / "benchmark.csv")
    assert rows == parallel
    assert rows[2].error == "NonFiniteLossError: loss became nan"
