from pathlib import Path

import numpy as np
import pytest

from ecgtransfer import report
from ecgtransfer.errors import ConfigInvalid

GOLDEN = Path(__file__).parent / "golden"


def _row(setting, mode, param, seed, base, digest="m1"):
    r = {"setting": setting, "freeze_mode": mode, "parameter": param, "seed": seed,
         "manifest_digest": digest, "config_digest": "c1"}
    for i, split in enumerate(("train", "val", "test")):
        r[f"{split}_accuracy"] = base + i / 100
        r[f"{split}_auc"] = base + 0.1 + i / 100
    return r


def test_fixture_contents():
    rows = report.published_tables()
    assert len(rows) == 168
    tables = {t for t, *_ in rows}
    assert tables == {"table1", "table2", "table3", "table4"}
    lookup = {(t, g, r, c): v for t, g, r, c, v in rows}
    assert lookup[("table1", "", "1D-CNN", "HR/val_mae")] == 0.706
    assert lookup[("table3", "", "Baseline", "test_auc")] == 0.884
    assert lookup[("table3", "none", "QRS", "test_auc")] == 0.906


@pytest.mark.parametrize("name", ["table1.md", "table2.md", "table3.md", "table4.md"])
def test_published_tables_match_golden(name):
    rendered = report.render_all(report.published_tables())
    assert rendered[name] == (GOLDEN / name).read_text()


def test_render_is_stable():
    a = report.render_all(report.published_tables())
    b = report.render_all(report.read_long_csv(
        "table,group,row,column,value\n" + "".join(
            f"{t},{g},{r},{c},{v!r}\n" for t, g, r, c, v in report.published_tables())))
    assert a == b


def test_missing_values_render_na():
    rows = [("table2", "", "1D-CNN", "train_accuracy", 0.5)]
    line = report.render_classification_table(rows).splitlines()[2]
    assert line == "| 1D-CNN | 0.500 | n/a | n/a | n/a |"


def test_transfer_rows_average_seeds():
    rows = [_row("baseline", "", "", 0, 0.5), _row("baseline", "", "", 1, 0.7),
            _row("real-setA", "none", "QRS", 0, 0.6)]
    long = report.transfer_long_rows(rows)
    got = {(t, g, r, c): v for t, g, r, c, v in long}
    assert got[("table3", "", "Baseline", "train_accuracy")] == pytest.approx(0.6)
    assert got[("table3", "none", "QRS", "test_auc")] == pytest.approx(0.72)
    assert not any(t == "table4" for t, *_ in long)
    md = report.render_transfer_table(long, "table3").splitlines()
    assert md[2].startswith("|  | Baseline | 0.600 |")
    assert md[3].startswith("| Not Frozen | Transfer QRS |")


def test_digest_cross_check():
    rows = [_row("baseline", "", "", 0, 0.5), _row("real-setA", "none", "HR", 0, 0.5, "m2")]
    with pytest.raises(ConfigInvalid, match="manifest_digest"):
        report.transfer_long_rows(rows)


def test_results_csv_roundtrip(tmp_path):
    rows = [_row("baseline", "", "", 0, 0.5)]
    report.write_results_csv(tmp_path / "r.csv", rows)
    back = report.read_results_csv(tmp_path / "r.csv")
    assert list(back[0]) == list(report.RESULT_COLUMNS)
    assert float(back[0]["val_auc"]) == rows[0]["val_auc"]


def test_regression_and_classification_rows():
    reg = report.regression_long_rows([{"dataset": "synthetic", "model": "lstm", "parameter": "QT",
                                        "train_mae": 3.0, "val_mae": 4.0}])
    md = report.render_all(reg)["table1_synthetic.md"].splitlines()
    assert md[2] == "| LSTM | n/a | n/a | n/a | n/a | n/a | n/a | 3.000 | 4.000 |"
    cls = report.classification_long_rows([
        {"model": "rnn", "train_accuracy": 0.5, "train_auc": 0.6, "val_accuracy": 0.4, "val_auc": 0.5},
        {"model": "rnn", "train_accuracy": 0.7, "train_auc": 0.8, "val_accuracy": 0.6, "val_auc": 0.7}])
    assert report.render_all(cls)["table2.md"].splitlines()[2] == "| RNN | 0.600 | 0.700 | 0.500 | 0.600 |"


def test_plots_written(tmp_path):
    rows = [(0, np.inf, 0.0, 0.0), (0, 0.5, 0.2, 0.8), (0, 0.1, 1.0, 1.0)]
    report.plot_roc(rows, tmp_path / "roc.png", ["NORM"], "t")
    report.plot_class_distribution([("A-train", "NORM", 5), ("B-train", "NORM", 4),
                                    ("A-train", "", 1)], tmp_path / "dist.png")
    for name in ("roc.png", "dist.png"):
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
