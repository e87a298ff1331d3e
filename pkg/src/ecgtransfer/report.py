"""Result tables (CSV and Markdown) and static plots.

Tables share one long-format representation, ``(table, group, row, column,
value)``, so published numbers and fresh results go through the same
renderers. Layouts:

* ``table1``: regression MAE per model, train/val for HR, QRS, PR, QT
* ``table2``: classification accuracy/AUC per model, train/val
* ``table3``/``table4``: baseline plus transfer rows grouped by freeze mode,
  train/val/test accuracy and AUC (real source / synthetic source)
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from importlib import resources
from pathlib import Path
from statistics import mean

from .errors import ConfigInvalid

TABLE_PARAMETERS = ("HR", "QRS", "PR", "QT")
MODEL_LABELS = {"rnn": "RNN", "lstm": "LSTM", "1dcnn": "1D-CNN"}
GROUP_LABELS = {"": "", "frozen-7": "1-7 Frozen", "none": "Not Frozen"}
SPLIT_LABELS = {"train": "Train", "val": "Validation", "test": "Test"}
RESULT_COLUMNS = ("setting", "freeze_mode", "parameter", "seed",
                  "train_accuracy", "train_auc", "val_accuracy", "val_auc",
                  "test_accuracy", "test_auc", "manifest_digest", "config_digest")
TRANSFER_TABLE = {"real-setA": "table3", "synthetic": "table4"}


def read_long_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [(r["table"], r["group"], r["row"], r["column"], float(r["value"])) for r in rows]


def published_tables() -> list:
    """Published values shipped with the package, in long format."""
    text = resources.files("ecgtransfer").joinpath("data/published_tables.csv").read_text()
    return read_long_csv(text)


def _collect(long_rows, table: str):
    """Ordered ``{(group, row): {column: value}}`` for one table."""
    data = {}
    for t, group, row, column, value in long_rows:
        if t == table:
            data.setdefault((group, row), {})[column] = value
    return data


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _line(cells) -> str:
    return "| " + " | ".join(cells) + " |"


def render_regression_table(long_rows, table: str = "table1") -> str:
    data = _collect(long_rows, table)
    header = ["Model"] + [f"{p} {s} MAE" for p in TABLE_PARAMETERS for s in ("Tr", "Val")]
    lines = [_line(header), _line(["---"] + ["---:"] * 8)]
    for (_, row), cols in data.items():
        vals = [cols.get(f"{p}/{s}_mae") for p in TABLE_PARAMETERS for s in ("train", "val")]
        lines.append(_line([row] + [_fmt(v) for v in vals]))
    return "\n".join(lines) + "\n"


def render_classification_table(long_rows, table: str = "table2") -> str:
    data = _collect(long_rows, table)
    splits = ("train", "val")
    header = ["Model"] + [f"{SPLIT_LABELS[s]} {m}" for s in splits for m in ("Accuracy", "AUC")]
    lines = [_line(header), _line(["---"] + ["---:"] * 4)]
    for (_, row), cols in data.items():
        vals = [cols.get(f"{s}_{m}") for s in splits for m in ("accuracy", "auc")]
        lines.append(_line([row] + [_fmt(v) for v in vals]))
    return "\n".join(lines) + "\n"


def render_transfer_table(long_rows, table: str) -> str:
    data = _collect(long_rows, table)
    splits = ("train", "val", "test")
    header = ["Setting", "Model"] + [f"{SPLIT_LABELS[s]} {m}" for s in splits
                                     for m in ("Accuracy", "AUC")]
    lines = [_line(header), _line(["---", "---"] + ["---:"] * 6)]
    previous = None
    for (group, row), cols in data.items():
        label = GROUP_LABELS.get(group, group) if group != previous else ""
        previous = group
        name = row if row == "Baseline" else f"Transfer {row}"
        vals = [cols.get(f"{s}_{m}") for s in splits for m in ("accuracy", "auc")]
        lines.append(_line([label, name] + [_fmt(v) for v in vals]))
    return "\n".join(lines) + "\n"


def render_all(long_rows) -> dict:
    """``{file name: markdown}`` for every table present in ``long_rows``."""
    present = {t for t, *_ in long_rows}
    out = {}
    for t in sorted(present):
        if t.startswith("table1"):
            out[f"{t}.md"] = render_regression_table(long_rows, t)
        elif t.startswith("table2"):
            out[f"{t}.md"] = render_classification_table(long_rows, t)
        else:
            out[f"{t}.md"] = render_transfer_table(long_rows, t)
    return out


# ---------------------------------------------------------------------------
# fresh results -> long format
# ---------------------------------------------------------------------------


def check_digests(rows: list, key: str) -> str:
    values = {r[key] for r in rows}
    if len(values) > 1:
        raise ConfigInvalid(f"runs disagree on {key}: {sorted(values)}")
    return values.pop() if values else ""


def transfer_long_rows(results: list) -> list:
    """Average result rows over seeds into table3/table4 entries.

    The baseline row is repeated at the top of each transfer table.
    """
    check_digests(results, "manifest_digest")
    check_digests(results, "config_digest")
    buckets = defaultdict(list)
    for r in results:
        if r["setting"] == "baseline":
            key = ("baseline", "", "Baseline")
        else:
            key = (r["setting"], r["freeze_mode"], r["parameter"])
        buckets[key].append(r)
    metric_cols = [c for c in RESULT_COLUMNS if c.endswith(("_accuracy", "_auc"))]
    out = []
    order = [("baseline", "", "Baseline")] + [
        (ds, mode, p) for ds in TRANSFER_TABLE for mode in ("frozen-7", "none")
        for p in TABLE_PARAMETERS]
    for ds, table in TRANSFER_TABLE.items():
        if not any(k[0] == ds for k in buckets):
            continue
        for key in order:
            if key[0] not in ("baseline", ds) or key not in buckets:
                continue
            for col in metric_cols:
                out.append((table, key[1], key[2], col,
                            mean(float(r[col]) for r in buckets[key])))
    return out


def regression_long_rows(runs: list) -> list:
    """``runs``: dicts with dataset, model, parameter, train_mae, val_mae."""
    out = []
    for r in runs:
        table = f"table1_{r['dataset']}"
        row = MODEL_LABELS.get(r["model"], r["model"])
        out.append((table, "", row, f"{r['parameter']}/train_mae", float(r["train_mae"])))
        out.append((table, "", row, f"{r['parameter']}/val_mae", float(r["val_mae"])))
    return out


def classification_long_rows(runs: list) -> list:
    """``runs``: dicts with model and train/val accuracy and AUC."""
    grouped = defaultdict(list)
    for r in runs:
        grouped[r["model"]].append(r)
    out = []
    for model, rs in grouped.items():
        for col in ("train_accuracy", "train_auc", "val_accuracy", "val_auc"):
            out.append(("table2", "", MODEL_LABELS.get(model, model), col,
                        mean(float(r[col]) for r in rs)))
    return out


def write_results_csv(path, rows: list) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue())


def read_results_csv(path) -> list:
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_roc(rows: list, path, class_names=None, title: str = "") -> None:
    """One-vs-rest ROC curves from ``(class, threshold, fpr, tpr)`` rows."""
    plt = _pyplot()
    curves = defaultdict(lambda: ([], []))
    for c, _, fpr, tpr in rows:
        curves[c][0].append(fpr)
        curves[c][1].append(tpr)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for c, (fpr, tpr) in sorted(curves.items()):
        ax.plot(fpr, tpr, label=class_names[c] if class_names else str(c))
    ax.plot([0, 1], [0, 1], "k:", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_class_distribution(stats_rows: list, path, parts=("A", "B")) -> None:
    """Bar chart of class counts per set from split-statistics rows."""
    plt = _pyplot()
    counts = defaultdict(lambda: defaultdict(int))
    classes = []
    for part, cls, count in stats_rows:
        if not cls:
            continue
        if cls not in classes:
            classes.append(cls)
        counts[part.split("-")[0]][cls] += int(count)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(parts)
    for i, part in enumerate(parts):
        xs = [j + i * width for j in range(len(classes))]
        ax.bar(xs, [counts[part][c] for c in classes], width, label=f"Set {part}")
    ax.set_xticks([j + width * (len(parts) - 1) / 2 for j in range(len(classes))])
    ax.set_xticklabels(classes)
    ax.set_ylabel("records")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
