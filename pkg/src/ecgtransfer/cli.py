"""Command-line pipeline: gen-toy, ingest, split, train-regression,
train-classification, transfer, report.

Exit codes: 0 ok, 2 config error, 3 missing artifact, 4 already exists,
5 diverged training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config
from .dataset import (
    PARAMETERS, SplitAssignment, Task, assign_real, assign_synthetic, filter_single_label,
    record_from_meta, split_stats, to_arrays, write_split_stats, ClassLabel, LabeledRecord,
    RegressionTargets,
)
from .errors import AlreadyExists, ConfigInvalid, EcgError, MissingArtifact
from .metrics import roc_points, write_roc_csv
from .model import registry_build
from .signal_io import (
    EcgMatrix, RecordMeta, RecordStore, normalize, read_asc, read_wfdb, select_leads,
)
from .toy import ToySpec, gen_toy
from .training import evaluate, fit, write_history_csv
from .transfer import (
    SOURCE_DATASETS, BaselineConfig, TransferConfig, build_grid, filter_grid, run_baseline,
    run_transfer,
)
from . import report

log = logging.getLogger("ecgtransfer")
ARTIFACT_FILE = "artifact.json"
CLASS_NAMES = [c.name for c in ClassLabel]


# ---------------------------------------------------------------------------
# artifact bookkeeping
# ---------------------------------------------------------------------------


def _claim(path: Path, force: bool) -> Path:
    if (path / ARTIFACT_FILE).exists() and not force:
        raise AlreadyExists(f"{path} already exists (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seal(path: Path, **info) -> None:
    (path / ARTIFACT_FILE).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _read_artifact(path: Path) -> dict:
    f = path / ARTIFACT_FILE
    if not f.exists():
        raise MissingArtifact(f"missing artifact {path}")
    return json.loads(f.read_text())


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------


class _Corpus:
    """Metadata-backed records of one store; signals load on demand."""

    def __init__(self, root: Path, labeled: bool):
        self.store = RecordStore(root)
        records = [record_from_meta(m) for m in self.store.metadata()]
        if labeled:
            kept = filter_single_label(records)
            if len(kept) < len(records):
                log.info("%s: dropped %d record(s) without a single class label",
                         root, len(records) - len(kept))
            records = kept
        self.records = records
        self.by_id = {r.record_id: r for r in records}

    def arrays(self, ids, task: Task):
        recs = [self.by_id[i] for i in ids]
        return to_arrays(recs, task, loader=self.store.load_arrays)


def _corpus(cfg: RunConfig, dataset: str) -> _Corpus:
    if dataset == "synthetic":
        if cfg.synthetic_dir is None:
            raise ConfigInvalid("no [data] synthetic store configured")
        return _Corpus(cfg.synthetic_dir, labeled=False)
    if cfg.real_dir is None:
        raise ConfigInvalid("no [data] real store configured")
    return _Corpus(cfg.real_dir, labeled=True)


def _manifest(cfg: RunConfig, dataset: str) -> SplitAssignment:
    name = "synthetic_manifest.csv" if dataset == "synthetic" else "real_manifest.csv"
    path = cfg.out_dir / "splits" / name
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `split` first")
    return SplitAssignment.read(path)


def _parts(dataset: str) -> tuple:
    if dataset == "synthetic":
        return "train", "val", "test"
    prefix = "A" if dataset == "real-setA" else "B"
    return tuple(f"{prefix}-{p}" for p in ("train", "val", "test"))


def _split_data(cfg: RunConfig, dataset: str, task: Task):
    corpus = _corpus(cfg, dataset)
    manifest = _manifest(cfg, dataset)
    data = {}
    for key, part in zip(("train", "val", "test"), _parts(dataset)):
        data[key] = corpus.arrays(manifest.ids(part), task)
    return data, manifest.digest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_toy(args, cfg: RunConfig) -> None:
    out = Path(args.out or "toy")
    if (out / "metadata.csv").exists() and not args.force:
        raise AlreadyExists(f"{out} already holds a store (use --force)")
    spec = ToySpec(n_records=args.n_records, noise=args.noise,
                   seed=args.seed if args.seed is not None else 0,
                   labeled=not args.unlabeled, id_prefix=args.id_prefix)
    corpus = gen_toy(spec, out)
    print(f"wrote {spec.n_records} records to {out}; noise floor {corpus.noise_floor}")


def _read_labels(path) -> dict:
    import csv

    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels = frozenset(ClassLabel[s.strip()] for s in (row.get("labels") or "").split(";")
                               if s.strip())

            def num(key):
                v = (row.get(key) or "").strip()
                return float(v) if v else None

            out[row["record_id"]] = (labels, RegressionTargets(
                num("hr_bpm"), num("pr_ms"), num("qt_ms"), num("qrs_ms")))
    return out


def cmd_ingest(args, cfg: RunConfig) -> None:
    src = Path(args.input)
    out = Path(args.out or "store")
    if (out / "metadata.csv").exists() and not args.force:
        raise AlreadyExists(f"{out} already holds a store (use --force)")
    if args.format == "wfdb":
        paths = sorted(src.glob("*.hea"))
    else:
        paths = sorted(src.glob("*.asc"))
    if not paths:
        raise MissingArtifact(f"no .{'hea' if args.format == 'wfdb' else 'asc'} files in {src}")
    labels = _read_labels(args.labels) if args.labels else {}
    records = []
    for p in paths:
        raw = read_wfdb(p) if args.format == "wfdb" else read_asc(p)
        if raw.header.lead_count == 12:
            raw = select_leads(raw)
        rid = p.stem
        label_set, targets = labels.get(rid, (frozenset(), None))
        records.append(LabeledRecord(rid, normalize(raw), None, targets, label_set))
    if args.labels:
        before = len(records)
        records = filter_single_label(records)
        log.info("kept %d of %d records with a single class label", len(records), before)
    with RecordStore(out) as store:
        for r in records:
            t = r.targets or RegressionTargets()
            store.add(r.signal, RecordMeta(r.record_id, r.label.name if r.label is not None else None,
                                           t.hr, t.pr, t.qt, t.qrs))
    print(f"ingested {len(records)} record(s) into {out}")


def cmd_split(args, cfg: RunConfig) -> None:
    out = _claim(cfg.out_dir / "splits", args.force)
    info = {"config_digest": cfg.digest(), "seed": cfg.split_seed}
    if cfg.real_dir is not None:
        corpus = _corpus(cfg, "real-setA")
        manifest = assign_real(corpus.records, cfg.split_seed)
        manifest.write(out / "real_manifest.csv")
        stats = split_stats(manifest, corpus.records)
        write_split_stats(out / "real_split_stats.csv", stats)
        info["real_manifest_digest"] = manifest.digest()
    if cfg.synthetic_dir is not None:
        corpus = _corpus(cfg, "synthetic")
        manifest = assign_synthetic(corpus.records, cfg.split_seed)
        manifest.write(out / "synthetic_manifest.csv")
        info["synthetic_manifest_digest"] = manifest.digest()
    if len(info) == 2:
        raise ConfigInvalid("config names no [data] store to split")
    _seal(out, **info)
    print(f"wrote manifests to {out}")


def _seeds(args, cfg: RunConfig) -> tuple:
    return (args.seed,) if args.seed is not None else cfg.transfer_seeds


def _datasets(arg: str, cfg: RunConfig) -> list:
    if arg != "all":
        return [arg]
    return [d for d in SOURCE_DATASETS
            if (cfg.synthetic_dir if d == "synthetic" else cfg.real_dir) is not None]


def regression_dir(cfg: RunConfig, dataset: str, parameter: str, model: str, seed: int) -> Path:
    return cfg.out_dir / "regression" / f"{dataset}_{parameter}_{model}_s{seed}"


def cmd_train_regression(args, cfg: RunConfig) -> None:
    model_name = args.model or cfg.model_name
    params = PARAMETERS if args.parameter == "all" else (args.parameter.upper(),)
    for dataset in _datasets(args.dataset, cfg):
        for parameter in params:
            task = Task("regression", parameter)
            data, digest = _split_data(cfg, dataset, task)
            for seed in _seeds(args, cfg):
                out = _claim(regression_dir(cfg, dataset, parameter, model_name, seed), args.force)
                net = registry_build(model_name, "regression", seed, cfg.architecture(model_name))
                result = fit(net, data["train"], data["val"], task, cfg.training, seed,
                             checkpoint_dir=out, digest=cfg.digest())
                scores = {k: evaluate(net, *data[k], task, cfg.training.eval_batch_size)["mae"]
                          for k in ("train", "val", "test")}
                write_history_csv(out / "history.csv", result.history)
                _dump_json(out / "metrics.json", {
                    "dataset": dataset, "parameter": parameter, "model": model_name,
                    "seed": seed, "train_mae": scores["train"], "val_mae": scores["val"],
                    "test_mae": scores["test"], "best_epoch": result.best_epoch,
                    "stop_reason": result.stop_reason})
                _seal(out, config_digest=cfg.digest(), seed=seed, manifest_digest=digest,
                      kind="regression")
                print(f"{out.name}: val MAE {scores['val']:.4f} ({result.epochs_run} epochs)")


def _save_classifier(out: Path, res, digest: str, data: dict, model: str) -> None:
    write_history_csv(out / "history.csv", res.history)
    bundles = {k: {m: v for m, v in b.items()} for k, b in res.metrics.items()}
    row = res.row()
    row["config_digest"] = digest
    _dump_json(out / "metrics.json", {"model": model, "metrics": bundles,
                                      "run_id": res.config.run_id})
    _dump_json(out / "result.json", row)
    np.savez(out / "test_scores.npz", scores=res.test_scores, labels=data["test"][1])
    _seal(out, config_digest=digest, seed=res.config.seed,
          manifest_digest=res.manifest_digest, kind=res.config.kind)


def cmd_train_classification(args, cfg: RunConfig) -> None:
    model_name = args.model or cfg.model_name
    task = Task("classification")
    data, digest = _split_data(cfg, "real-setB", task)
    for seed in _seeds(args, cfg):
        out = _claim(cfg.out_dir / "classification" / f"{model_name}_baseline_s{seed}", args.force)
        run = BaselineConfig(seed)
        if model_name == "1dcnn":
            res = run_baseline(run, data, cfg.training, cfg.architecture("1dcnn"), out, digest,
                               cfg.digest())
        else:
            from .transfer import train_classifier

            net = registry_build(model_name, "classification", seed, cfg.architecture(model_name))
            res = train_classifier(net, run, data, cfg.training, out, digest, cfg.digest())
        _save_classifier(out, res, cfg.digest(), data, model_name)
        print(f"{out.name}: val AUC {res.metrics['val']['auc']:.4f}")


def cmd_transfer(args, cfg: RunConfig) -> None:
    grid = [r for r in build_grid(_seeds(args, cfg)) if isinstance(r, TransferConfig)]
    if args.grid_filter:
        grid = filter_grid(grid, args.grid_filter)
    available = set(_datasets("all", cfg))
    grid = [r for r in grid if r.source_dataset in available]
    if not grid:
        raise ConfigInvalid("grid filter selects no runs")
    ckpts = {}
    for run in grid:
        ckpt = regression_dir(cfg, run.source_dataset, run.source_parameter, "1dcnn",
                              run.seed) / "best.pt"
        if not ckpt.exists():
            raise MissingArtifact(f"{ckpt} not found; run `train-regression` first")
        ckpts[run] = ckpt
    task = Task("classification")
    data, digest = _split_data(cfg, "real-setB", task)
    for run, ckpt in ckpts.items():
        out = _claim(cfg.out_dir / "transfer" / run.run_id, args.force)
        res = run_transfer(run, ckpt, data, cfg.training, out, digest, cfg.digest())
        _save_classifier(out, res, cfg.digest(), data, "1dcnn")
        print(f"{run.run_id}: test AUC {res.metrics['test']['auc']:.4f}")


def _json_rows(paths) -> list:
    return [json.loads(p.read_text()) for p in sorted(paths)]


def cmd_report(args, cfg: RunConfig) -> None:
    out = _claim(cfg.out_dir / "report", args.force)
    if args.published:
        published_dir = out / "published"
        published_dir.mkdir(exist_ok=True)
        for name, text in report.render_all(report.published_tables()).items():
            (published_dir / name).write_text(text)
        _seal(out, kind="published-report")
        print(f"wrote published tables to {published_dir}")
        return
    runs = cfg.out_dir
    baseline_dirs = sorted((runs / "classification").glob("1dcnn_baseline_s*"))
    transfer_dirs = sorted((runs / "transfer").glob("*"))
    result_dirs = [d for d in baseline_dirs + transfer_dirs if (d / "result.json").exists()]
    if not result_dirs:
        raise MissingArtifact("no classification or transfer results to report")
    for d in result_dirs:
        _read_artifact(d)
    rows = [json.loads((d / "result.json").read_text()) for d in result_dirs]
    report.write_results_csv(out / "results.csv", rows)
    long_rows = report.transfer_long_rows(rows)
    long_rows += report.regression_long_rows(_json_rows((runs / "regression").glob("*/metrics.json")))
    cls_runs = []
    for p in sorted((runs / "classification").glob("*/metrics.json")):
        m = json.loads(p.read_text())
        cls_runs.append({"model": m["model"], **{
            f"{s}_{k}": m["metrics"][s][k] for s in ("train", "val") for k in ("accuracy", "auc")}})
    long_rows += report.classification_long_rows(cls_runs)
    for name, text in report.render_all(long_rows).items():
        (out / name).write_text(text)
    roc_dir = out / "roc"
    roc_dir.mkdir(exist_ok=True)
    plots = not args.no_plots
    if plots:
        (out / "plots").mkdir(exist_ok=True)
    for d in result_dirs:
        z = np.load(d / "test_scores.npz")
        pts = roc_points(z["scores"], z["labels"])
        write_roc_csv(roc_dir / f"{d.name}.csv", pts, CLASS_NAMES)
        if plots:
            report.plot_roc(pts, out / "plots" / f"roc_{d.name}.png", CLASS_NAMES, d.name)
    stats = runs / "splits" / "real_split_stats.csv"
    if plots and stats.exists():
        import csv

        with open(stats, newline="") as fh:
            srows = [(r["partition"], r["class"], r["count"]) for r in csv.DictReader(fh)]
        report.plot_class_distribution(srows, out / "plots" / "class_distribution.png")
    _seal(out, config_digest=cfg.digest(), kind="report", rows=len(rows))
    print(f"wrote {len(rows)} result rows and tables to {out}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (INI)")
    common.add_argument("--seed", type=int, help="override the seed(s) from the config")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("--grid-filter", default="",
                        help="comma-separated key=value filter over the transfer grid")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="ecgtransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", parents=[common], help="write a synthetic toy corpus")
    p.add_argument("--n-records", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--unlabeled", action="store_true", help="omit class labels")
    p.add_argument("--id-prefix", default="toy")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("ingest", parents=[common], help="convert raw records to an ECG8 store")
    p.add_argument("--format", choices=("wfdb", "asc"), required=True)
    p.add_argument("--input", required=True, help="directory of .hea/.dat or .asc files")
    p.add_argument("--labels", help="CSV: record_id, labels (';'-separated), hr_bpm, pr_ms, qt_ms, qrs_ms")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", parents=[common], help="write split manifests")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-regression", parents=[common], help="train regression models")
    p.add_argument("--dataset", default="all", choices=("all",) + SOURCE_DATASETS)
    p.add_argument("--parameter", default="all")
    p.add_argument("--model")
    p.set_defaults(func=cmd_train_regression)

    p = sub.add_parser("train-classification", parents=[common],
                       help="train the Set-B baseline classifier")
    p.add_argument("--model")
    p.set_defaults(func=cmd_train_classification)

    p = sub.add_parser("transfer", parents=[common], help="run transfer grid cells")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", parents=[common], help="aggregate results into tables")
    p.add_argument("--published", action="store_true", help="render the published tables only")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config)
        if args.out:
            cfg.out_dir = Path(args.out)
        if args.seed is not None and args.command == "split":
            cfg.split_seed = args.seed
        if args.seed is not None and args.command != "split":
            cfg.transfer_seeds = (args.seed,)
        if args.command not in ("gen-toy", "ingest"):
            cfg.validate()
        args.func(args, cfg)
    except EcgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
