"""Regression-to-classification transfer: head swap, freezing, the run grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import torch

from .dataset import N_CLASSES, PARAMETERS, Task
from .errors import ConfigInvalid, IncompatibleArchitecture, IndexOutOfRange
from .model import Cnn1d, EcgNet, _param_leaves, build_1dcnn, init_module, predict, softmax
from .training import FitResult, TrainConfig, evaluate, fit, load_checkpoint, model_from_checkpoint

log = logging.getLogger(__name__)

SOURCE_DATASETS = ("real-setA", "synthetic")
FREEZE_MODES = ("frozen-7", "none")
#: parameter order used by the published result tables
TABLE_PARAMETER_ORDER = ("HR", "QRS", "PR", "QT")
FROZEN_LAYERS = 7


def swap_head(pretrained: EcgNet, seed: int = 0, n_classes: int = N_CLASSES) -> Cnn1d:
    """Copy of a regression CNN whose final linear layer is a fresh
    ``n_classes``-way layer. Every other parameter and statistic is copied."""
    if not isinstance(pretrained, Cnn1d) or pretrained.task != "regression":
        raise IncompatibleArchitecture("swap_head needs a 1D-CNN with a regression head")
    model = Cnn1d(pretrained.config, "classification", n_classes)
    state = {k: v.clone() for k, v in pretrained.state_dict().items()
             if not k.startswith(("head.", "target_"))}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected or any(not k.startswith("head.") for k in missing):
        raise IncompatibleArchitecture(f"state mismatch: missing={missing} unexpected={unexpected}")
    init_module(model.head, torch.Generator().manual_seed(int(seed)))
    return model


def freeze_prefix(model: EcgNet, n: int = FROZEN_LAYERS) -> EcgNet:
    """Mark the first ``n`` enumerated layers non-trainable, the rest trainable."""
    leaves = list(_param_leaves(model))
    if not 0 <= n <= len(leaves):
        raise IndexOutOfRange(f"cannot freeze {n} of {len(leaves)} layers")
    for i, (_, _, params) in enumerate(leaves):
        for p in params:
            p.requires_grad_(i >= n)
    model.frozen_prefix = n
    model.train(model.training)
    return model


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferConfig:
    source_dataset: str
    source_parameter: str
    freeze_mode: str
    seed: int = 0
    kind = "transfer"

    def __post_init__(self):
        if self.source_dataset not in SOURCE_DATASETS:
            raise ConfigInvalid(f"source_dataset must be one of {SOURCE_DATASETS}")
        if self.source_parameter not in PARAMETERS:
            raise ConfigInvalid(f"source_parameter must be one of {PARAMETERS}")
        if self.freeze_mode not in FREEZE_MODES:
            raise ConfigInvalid(f"freeze_mode must be one of {FREEZE_MODES}")

    @property
    def freeze_layers(self) -> int:
        return FROZEN_LAYERS if self.freeze_mode == "frozen-7" else 0

    @property
    def run_id(self) -> str:
        return f"{self.source_dataset}_{self.source_parameter}_{self.freeze_mode}_s{self.seed}"


@dataclass(frozen=True)
class BaselineConfig:
    """Randomly initialized classifier trained on Set B only."""

    seed: int = 0
    kind = "baseline"

    @property
    def run_id(self) -> str:
        return f"baseline_s{self.seed}"


GridRun = Union[TransferConfig, BaselineConfig]


def build_grid(seeds: Sequence[int] = (0,)) -> list:
    """For each seed: the baseline, then all 16 transfer cells."""
    grid = []
    for seed in seeds:
        grid.append(BaselineConfig(seed))
        for dataset in SOURCE_DATASETS:
            for mode in FREEZE_MODES:
                for param in TABLE_PARAMETER_ORDER:
                    grid.append(TransferConfig(dataset, param, mode, seed))
    return grid


_FILTER_ALIASES = {"parameter": "source_parameter", "dataset": "source_dataset",
                   "mode": "freeze_mode"}


def filter_grid(grid: Sequence[GridRun], expr: str) -> list:
    """Keep runs matching every ``key=value`` in a comma-separated ``expr``.

    A run lacking a filtered field (the baseline has no ``freeze_mode``) is
    dropped.
    """
    conds = []
    for part in filter(None, (p.strip() for p in (expr or "").split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigInvalid(f"grid filter term {part!r} is not key=value")
        conds.append((_FILTER_ALIASES.get(key.strip(), key.strip()), value.strip()))
    out = []
    for run in grid:
        ok = True
        for key, value in conds:
            have = getattr(run, key, None)
            if have is None or str(have) != value:
                ok = False
                break
        if ok:
            out.append(run)
    return out


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class TransferResult:
    config: GridRun
    metrics: dict  # split -> bundle from training.evaluate
    history: list
    checkpoint_ref: Optional[str] = None
    manifest_digest: str = ""
    fit_result: Optional[FitResult] = field(default=None, repr=False)
    test_scores: Optional[object] = field(default=None, repr=False)

    def row(self) -> dict:
        cfg = self.config
        out = {
            "setting": cfg.source_dataset if cfg.kind == "transfer" else "baseline",
            "freeze_mode": cfg.freeze_mode if cfg.kind == "transfer" else "",
            "parameter": cfg.source_parameter if cfg.kind == "transfer" else "",
            "seed": cfg.seed,
        }
        for split in ("train", "val", "test"):
            out[f"{split}_accuracy"] = self.metrics[split]["accuracy"]
            out[f"{split}_auc"] = self.metrics[split]["auc"]
        out["manifest_digest"] = self.manifest_digest
        return out


def train_classifier(model: EcgNet, run: GridRun, data: dict, fit_config: TrainConfig,
                     checkpoint_dir=None, manifest_digest: str = "", digest: str = ""
                     ) -> TransferResult:
    """Fit on ``data['train']``/``data['val']``, then score every split.

    Test metrics come from the best-validation weights and are computed once.
    """
    task = Task("classification")
    result = fit(model, data["train"], data["val"], task, fit_config, seed=run.seed,
                 checkpoint_dir=checkpoint_dir, digest=digest)
    bundles = {split: evaluate(model, *data[split], task, fit_config.eval_batch_size)
               for split in ("train", "val", "test")}
    scores = softmax(predict(model, data["test"][0], fit_config.eval_batch_size))
    ref = str(Path(checkpoint_dir) / "best.pt") if checkpoint_dir is not None else None
    return TransferResult(run, bundles, result.history, ref, manifest_digest, result, scores)


def prepare_transfer_model(config: TransferConfig, pretrained) -> Cnn1d:
    """Load (if given a path) the regression checkpoint, swap the head, freeze."""
    if isinstance(pretrained, (str, Path)):
        pretrained = load_checkpoint(pretrained)
    if isinstance(pretrained, dict):
        pretrained = model_from_checkpoint(pretrained)
    model = swap_head(pretrained, seed=config.seed)
    return freeze_prefix(model, config.freeze_layers)


def run_transfer(config: TransferConfig, pretrained, data: dict,
                 fit_config: Optional[TrainConfig] = None, checkpoint_dir=None,
                 manifest_digest: str = "", digest: str = "") -> TransferResult:
    """One grid cell: pretrained regression model -> Set-B classifier.

    ``pretrained`` is a checkpoint path, a checkpoint dict, or a model.
    ``data`` maps ``train``/``val``/``test`` to ``(X, labels)`` arrays.
    """
    model = prepare_transfer_model(config, pretrained)
    log.info("transfer %s: %d frozen layers", config.run_id, model.frozen_prefix)
    return train_classifier(model, config, data, fit_config or TrainConfig(), checkpoint_dir,
                            manifest_digest, digest)


def run_baseline(config: BaselineConfig, data: dict, fit_config: Optional[TrainConfig] = None,
                 backbone=None, checkpoint_dir=None, manifest_digest: str = "",
                 digest: str = "") -> TransferResult:
    kwargs = {} if backbone is None else {"backbone": backbone}
    model = build_1dcnn(head="classification", init_seed=config.seed, **kwargs)
    return train_classifier(model, config, data, fit_config or TrainConfig(), checkpoint_dir,
                            manifest_digest, digest)
