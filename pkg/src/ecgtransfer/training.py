"""Losses, learning-rate schedule and the epoch loop."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import metrics
from .dataset import Task, iter_batches
from .errors import DivergedLoss, EmptySplit, LengthMismatch, MissingCheckpoint, ShapeMismatch
from .model import EcgNet, model_from_spec, predict, softmax

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ecgtransfer-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    gamma: float = 0.99
    patience: int = 50
    max_epochs: int = 500
    batch_size: int = 32
    eval_batch_size: int = 64
    # regression heads learn in standardized units, predict in target units
    standardize_targets: bool = True
    # optional early exit once the validation metric reaches this value
    stop_at: Optional[float] = None
    checkpoint_every: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("initial learning rate must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def l1_loss(pred, target) -> torch.Tensor:
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise LengthMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return (pred - target).abs().mean()


def cross_entropy_loss(logits, one_hot) -> torch.Tensor:
    """Mean of ``logsumexp(logits) - logits[true]`` over the batch."""
    logits = torch.as_tensor(logits)
    one_hot = torch.as_tensor(one_hot, dtype=logits.dtype)
    if logits.dim() != 2 or logits.shape != one_hot.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(one_hot.shape)}")
    return (torch.logsumexp(logits, dim=1) - (one_hot * logits).sum(dim=1)).mean()


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return config.lr * config.gamma ** epoch


@dataclass
class SchedulerState:
    initial_lr: float
    gamma: float
    epoch: int = 0

    @property
    def current_lr(self) -> float:
        return self.initial_lr * self.gamma ** self.epoch

    def step(self) -> None:
        self.epoch += 1


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: EcgNet, X: np.ndarray, y: np.ndarray, task: Task,
             batch_size: int = 64) -> dict:
    """Eval-mode metric bundle.

    Regression: ``loss`` (L1) and ``mae``. Classification: ``loss``
    (cross-entropy), ``accuracy``, ``auc`` and ``auc_per_class``; class scores
    are softmax probabilities.
    """
    if len(X) == 0:
        raise EmptySplit("cannot evaluate on an empty split")
    out = predict(model, X, batch_size)
    if task.is_regression:
        pred = out[:, 0]
        value = metrics.mae(y, pred)
        return {"loss": value, "mae": value}
    n_classes = out.shape[1]
    loss = float(cross_entropy_loss(torch.as_tensor(out), np.eye(n_classes)[y]))
    probs = softmax(out)
    auc, per_class = metrics.auc_ovr(probs, y, n_classes)
    return {
        "loss": loss,
        "accuracy": metrics.accuracy(metrics.predict_labels(out), y),
        "auc": auc,
        "auc_per_class": [None if np.isnan(v) else float(v) for v in per_class],
    }


def selection_metric(task: Task) -> str:
    return "mae" if task.is_regression else "auc"


def _improved(task: Task, value: float, best: Optional[float]) -> bool:
    if best is None:
        return True
    return value < best if task.is_regression else value > best


def _reached(task: Task, value: float, target: Optional[float]) -> bool:
    if target is None:
        return False
    return value <= target if task.is_regression else value >= target


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(dict(payload, format=CHECKPOINT_FORMAT, version=CHECKPOINT_VERSION), path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT or ckpt.get("version") != CHECKPOINT_VERSION:
        raise MissingCheckpoint(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    return ckpt


def model_from_checkpoint(ckpt: dict, which: str = "best") -> EcgNet:
    """Rebuild the model stored in ``ckpt`` (its best weights by default)."""
    from .transfer import freeze_prefix

    model = model_from_spec(ckpt["model_spec"])
    model.load_state_dict(ckpt["best_model_state" if which == "best" else "model_state"])
    if ckpt.get("frozen_prefix"):
        freeze_prefix(model, ckpt["frozen_prefix"])
    return model


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    best_state: dict
    best_epoch: int
    best_metric: float
    history: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    checkpoint: Optional[dict] = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)

    def first_epoch_reaching(self, value: float, task: Task) -> Optional[int]:
        """1-based count of epochs until the validation metric reached ``value``."""
        key = selection_metric(task)
        for row in self.history:
            if _reached(task, row[f"val_{key}"], value):
                return row["epoch"] + 1
        return None


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _trainable(model: EcgNet) -> list:
    return [p for p in model.parameters() if p.requires_grad]


def fit(model: EcgNet, train: tuple, val: tuple, task: Task, config: TrainConfig = None,
        seed: int = 0, checkpoint_dir=None, resume: Optional[dict] = None,
        digest: str = "", on_epoch: Optional[Callable[[dict], None]] = None) -> FitResult:
    """Train ``model`` in place and restore its best-validation weights.

    One Adam step per batch; the learning rate for epoch ``e`` is
    ``lr * gamma**e``. Training stops after ``patience`` epochs without a
    strict improvement of the validation metric (MAE for regression, AUC for
    classification), at ``max_epochs``, or once ``stop_at`` is reached.

    ``resume`` is a checkpoint written by an earlier call with the same data
    and seed; training continues from the epoch after it.
    """
    config = config or TrainConfig()
    X_tr, y_tr = train
    X_va, y_va = val
    if len(X_tr) == 0 or len(X_va) == 0:
        raise EmptySplit("fit needs non-empty train and validation splits")
    if (model.task == "regression") != task.is_regression:
        raise ValueError(f"model head {model.task!r} does not match task {task}")
    key = selection_metric(task)
    n_classes = None if task.is_regression else model.n_outputs
    dtype = next(model.parameters()).dtype

    opt = torch.optim.Adam(_trainable(model), lr=config.lr, betas=config.betas, eps=config.eps)
    sched = SchedulerState(config.lr, config.gamma)
    history, best, best_epoch, best_state, since = [], None, -1, None, 0
    if resume is not None:
        model.load_state_dict(resume["model_state"])
        opt.load_state_dict(resume["optimizer_state"])
        sched.epoch = resume["epoch"] + 1
        history = list(resume["history"])
        best, best_epoch, since = resume["best_metric"], resume["best_epoch"], resume["since"]
        best_state = resume["best_model_state"]
    elif task.is_regression and config.standardize_targets:
        model.set_target_scaling(float(np.mean(y_tr)), float(np.std(y_tr)))

    frozen = [p for p in model.parameters() if not p.requires_grad]
    stop_reason = "max_epochs"

    def payload(epoch):
        return {
            "model_spec": model.spec,
            "model_state": copy.deepcopy(model.state_dict()),
            "best_model_state": best_state,
            "frozen_prefix": model.frozen_prefix,
            "optimizer_state": copy.deepcopy(opt.state_dict()),
            "epoch": epoch,
            "best_metric": best,
            "best_epoch": best_epoch,
            "since": since,
            "history": list(history),
            "train_config": config.to_dict(),
            "config_digest": digest or config.digest(),
            "seed": seed,
            "task": str(task),
        }

    last_epoch = sched.epoch - 1
    if resume is not None and (since >= config.patience
                               or _reached(task, history[-1][f"val_{key}"], config.stop_at)):
        stop_reason = "resumed_finished"
    else:
        for epoch in range(sched.epoch, config.max_epochs):
            lr = sched.current_lr
            for group in opt.param_groups:
                group["lr"] = lr
            torch.manual_seed(_epoch_seed(seed, epoch))
            model.train()
            total, count = 0.0, 0
            for b, batch in enumerate(iter_batches(X_tr, y_tr, config.batch_size, seed, epoch,
                                                   n_classes=n_classes)):
                x = torch.as_tensor(batch.signals, dtype=dtype)
                t = torch.as_tensor(batch.targets, dtype=dtype)
                opt.zero_grad(set_to_none=True)
                out = model(x)
                loss = l1_loss(out[:, 0], t) if task.is_regression else cross_entropy_loss(out, t)
                if not torch.isfinite(loss):
                    raise DivergedLoss(f"non-finite loss {loss.item()} at epoch {epoch}, "
                                       f"batch {b}, lr {lr:.3g}")
                loss.backward()
                if any(p.grad is not None for p in frozen):
                    raise RuntimeError("gradient reached a frozen parameter")
                opt.step()
                total += loss.item() * len(batch)
                count += len(batch)
            bundle = evaluate(model, X_va, y_va, task, config.eval_batch_size)
            value = bundle[key]
            if _improved(task, value, best):
                best, best_epoch, since = value, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                since += 1
            row = {"epoch": epoch, "train_loss": total / count, "val_loss": bundle["loss"],
                   f"val_{key}": value, "lr": lr}
            history.append(row)
            log.info("epoch %d train_loss %.5g val_%s %.5g lr %.4g", epoch, row["train_loss"],
                     key, value, lr)
            if on_epoch is not None:
                on_epoch(row)
            sched.step()
            last_epoch = epoch
            done = _reached(task, value, config.stop_at) or since >= config.patience
            if checkpoint_dir is not None and (done or (epoch + 1) % config.checkpoint_every == 0
                                               or epoch + 1 == config.max_epochs):
                save_checkpoint(Path(checkpoint_dir) / "last.pt", payload(epoch))
            if _reached(task, value, config.stop_at):
                stop_reason = "target_reached"
                break
            if since >= config.patience:
                stop_reason = "patience"
                break

    model.load_state_dict(best_state)
    final = payload(last_epoch)
    final["model_state"] = best_state
    final.pop("optimizer_state")
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "best.pt", final)
    return FitResult(best_state, best_epoch, best, history, stop_reason, final)


def write_history_csv(path, history: list) -> None:
    """Long-format history: ``epoch, split, metric, value, lr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "split", "metric", "value", "lr"])
    for row in history:
        lr = repr(float(row["lr"]))
        w.writerow([row["epoch"], "train", "loss", repr(float(row["train_loss"])), lr])
        w.writerow([row["epoch"], "val", "loss", repr(float(row["val_loss"])), lr])
        for k, v in row.items():
            if k.startswith("val_") and k != "val_loss":
                w.writerow([row["epoch"], "val", k[4:], repr(float(v)), lr])
    Path(path).write_text(buf.getvalue())
