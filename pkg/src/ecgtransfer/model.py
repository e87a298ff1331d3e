"""1D-CNN and recurrent networks for 8-lead ECG input.

The CNN backbone is a chain of blocks, each ``Conv -> MaxPool -> Conv ->
BatchNorm -> ReLU``, followed by a tail ``Conv -> BatchNorm -> ReLU``, a
flatten, an MLP, and a task head. The head is a single linear layer: one
output for regression, ``n_classes`` logits for classification.

"Layers" in the freezing sense are the leaf modules that own parameters,
counted in forward order (see :func:`enumerate_layers`).
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigInvalid, ShapeInferenceError, ShapeMismatch, UnknownModel

N_CLASSES = 5


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    mid_channels: int
    out_channels: int
    conv_kernel: int
    pool_size: int

    def __post_init__(self):
        for name in ("in_channels", "mid_channels", "out_channels", "conv_kernel", "pool_size"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive")
        if self.conv_kernel % 2 == 0:
            raise ConfigInvalid(f"conv_kernel must be odd, got {self.conv_kernel}")

    def parameter_count(self) -> int:
        k = self.conv_kernel
        return (self.in_channels * self.mid_channels * k + self.mid_channels
                + self.mid_channels * self.out_channels * k + self.out_channels
                + 2 * self.out_channels)


@dataclass(frozen=True)
class BackboneConfig:
    blocks: tuple = (
        BlockConfig(8, 32, 32, 7, 4),
        BlockConfig(32, 64, 64, 5, 4),
        BlockConfig(64, 128, 128, 5, 4),
    )
    tail_conv_channels: int = 128
    tail_kernel: int = 3
    mlp_hidden: tuple = (256, 128)
    dropout: float = 0.2
    n_leads: int = 8
    n_samples: int = 5000

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.blocks))
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if not self.blocks:
            raise ConfigInvalid("backbone needs at least one block")
        if self.blocks[0].in_channels != self.n_leads:
            raise ConfigInvalid("first block must take n_leads input channels")
        for a, b in zip(self.blocks, self.blocks[1:]):
            if a.out_channels != b.in_channels:
                raise ConfigInvalid(f"block channels do not chain: {a.out_channels} -> {b.in_channels}")
        if self.tail_kernel % 2 == 0:
            raise ConfigInvalid("tail_kernel must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigInvalid("dropout must lie in [0, 1)")
        if self.output_length < 1:
            raise ShapeInferenceError(
                f"pooling collapses {self.n_samples} samples to {self.output_length}")

    @property
    def output_length(self) -> int:
        length = self.n_samples
        for b in self.blocks:
            length //= b.pool_size
        return length

    @property
    def flatten_dim(self) -> int:
        return self.tail_conv_channels * self.output_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["blocks"] = tuple(BlockConfig(**b) for b in d["blocks"])
        return cls(**d)


@dataclass(frozen=True)
class RecurrentConfig:
    hidden: int = 128
    layers: int = 3
    stride: int = 10
    n_leads: int = 8
    n_samples: int = 5000

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_BACKBONE = BackboneConfig()


def _head_size(task: str, n_classes: int) -> int:
    if task == "regression":
        return 1
    if task == "classification":
        return n_classes
    raise ConfigInvalid(f"unknown task {task!r}")


class EcgNet(nn.Module):
    """Shared plumbing: input check, regression output scaling, freezing."""

    task: str
    n_leads: int
    n_samples: int

    def __init__(self, task: str, n_classes: int):
        super().__init__()
        self.task = task
        self.n_classes = n_classes
        self.n_outputs = _head_size(task, n_classes)
        self.frozen_prefix = 0
        if task == "regression":
            # predictions are head(h) * scale + mean, in target units
            self.register_buffer("target_mean", torch.zeros(1))
            self.register_buffer("target_scale", torch.ones(1))

    def set_target_scaling(self, mean: float, scale: float) -> None:
        if self.task != "regression":
            raise ConfigInvalid("target scaling only applies to regression heads")
        self.target_mean.fill_(float(mean))
        self.target_scale.fill_(float(scale) if scale > 0 else 1.0)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[0] < 1 or tuple(x.shape[1:]) != (self.n_leads, self.n_samples):
            raise ShapeMismatch(
                f"expected input [b, {self.n_leads}, {self.n_samples}], got {list(x.shape)}")

    def finish(self, out: torch.Tensor) -> torch.Tensor:
        if self.task == "regression":
            return out * self.target_scale + self.target_mean
        return out

    def train(self, mode: bool = True):
        super().train(mode)
        # frozen normalization layers keep their running statistics fixed
        if mode and self.frozen_prefix:
            for info in enumerate_layers(self)[:self.frozen_prefix]:
                module = self.get_submodule(info.name)
                if isinstance(module, nn.modules.batchnorm._BatchNorm):
                    module.eval()
        return self


class Block1d(nn.Module):
    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.conv1 = nn.Conv1d(cfg.in_channels, cfg.mid_channels, cfg.conv_kernel,
                               padding=cfg.conv_kernel // 2)
        self.pool = nn.MaxPool1d(cfg.pool_size)
        self.conv2 = nn.Conv1d(cfg.mid_channels, cfg.out_channels, cfg.conv_kernel,
                               padding=cfg.conv_kernel // 2)
        self.bn = nn.BatchNorm1d(cfg.out_channels)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.bn(self.conv2(self.pool(self.conv1(x)))))


class Cnn1d(EcgNet):
    def __init__(self, config: BackboneConfig = DEFAULT_BACKBONE, task: str = "classification",
                 n_classes: int = N_CLASSES):
        super().__init__(task, n_classes)
        self.config = config
        self.n_leads = config.n_leads
        self.n_samples = config.n_samples
        self.blocks = nn.ModuleList(Block1d(b) for b in config.blocks)
        c_last = config.blocks[-1].out_channels
        self.tail_conv = nn.Conv1d(c_last, config.tail_conv_channels, config.tail_kernel,
                                   padding=config.tail_kernel // 2)
        self.tail_bn = nn.BatchNorm1d(config.tail_conv_channels)
        self.tail_relu = nn.ReLU()
        self.flatten = nn.Flatten()
        mlp = []
        width = config.flatten_dim
        for hidden in config.mlp_hidden:
            mlp += [nn.Linear(width, hidden), nn.ReLU(), nn.Dropout(config.dropout)]
            width = hidden
        self.mlp = nn.Sequential(*mlp)
        self.head = nn.Linear(width, self.n_outputs)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.flatten(self.tail_relu(self.tail_bn(self.tail_conv(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.finish(self.head(self.mlp(self.features(x))))

    @property
    def spec(self) -> dict:
        return {"name": "1dcnn", "task": self.task, "n_classes": self.n_classes,
                "config": self.config.to_dict()}


class RecurrentNet(EcgNet):
    """Stacked tanh-RNN or LSTM over the lead-vector sequence, last-step readout."""

    def __init__(self, cell: str = "lstm", config: RecurrentConfig = RecurrentConfig(),
                 task: str = "classification", n_classes: int = N_CLASSES):
        super().__init__(task, n_classes)
        if cell not in ("rnn", "lstm"):
            raise UnknownModel(f"unknown recurrent cell {cell!r}")
        self.cell = cell
        self.config = config
        self.n_leads = config.n_leads
        self.n_samples = config.n_samples
        rnn_cls = nn.LSTM if cell == "lstm" else nn.RNN
        self.layers = nn.ModuleList(
            rnn_cls(config.n_leads if i == 0 else config.hidden, config.hidden, batch_first=True)
            for i in range(config.layers))
        self.head = nn.Linear(config.hidden, self.n_outputs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        seq = x.transpose(1, 2)[:, ::max(1, self.config.stride)]
        for layer in self.layers:
            seq, _ = layer(seq)
        return self.finish(self.head(seq[:, -1]))

    @property
    def spec(self) -> dict:
        return {"name": self.cell, "task": self.task, "n_classes": self.n_classes,
                "config": self.config.to_dict()}


# ---------------------------------------------------------------------------
# layer bookkeeping and initialization
# ---------------------------------------------------------------------------


class LayerInfo(NamedTuple):
    layer_index: int
    name: str
    parameter_count: int
    trainable: bool


def _param_leaves(model: nn.Module):
    for name, module in model.named_modules():
        params = list(module.parameters(recurse=False))
        if params:
            yield name, module, params


def enumerate_layers(model: nn.Module) -> list:
    """Parameter-owning leaf layers in forward order.

    Activations, pooling, dropout and flatten own no parameters and are not
    counted. ``trainable`` is true when every parameter requires grad.
    """
    return [
        LayerInfo(i, name, sum(p.numel() for p in params), all(p.requires_grad for p in params))
        for i, (name, _, params) in enumerate(_param_leaves(model))
    ]


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Fan-in uniform init from a private generator; batch norm to identity."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for _, module, _ in _param_leaves(model):
            init_module(module, gen)
    return model


def init_module(module: nn.Module, gen: torch.Generator) -> None:
    with torch.no_grad():
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            module.reset_running_stats()
            module.weight.fill_(1.0)
            module.bias.zero_()
        elif isinstance(module, (nn.Conv1d, nn.Linear)):
            fan_in = module.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            module.weight.uniform_(-bound, bound, generator=gen)
            if module.bias is not None:
                module.bias.uniform_(-bound, bound, generator=gen)
        elif isinstance(module, nn.RNNBase):
            bound = 1.0 / math.sqrt(module.hidden_size)
            for p in module.parameters(recurse=False):
                p.uniform_(-bound, bound, generator=gen)
        else:
            raise TypeError(f"no initializer for {type(module).__name__}")


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_1dcnn(backbone: BackboneConfig = DEFAULT_BACKBONE, head: str = "classification",
                init_seed: int = 0, n_classes: int = N_CLASSES) -> Cnn1d:
    return init_parameters(Cnn1d(backbone, head, n_classes), init_seed)


def _build_recurrent(cell):
    def build(config=None, task="classification", seed=0, n_classes=N_CLASSES):
        return init_parameters(RecurrentNet(cell, config or RecurrentConfig(), task, n_classes), seed)
    return build


def _build_cnn(config=None, task="classification", seed=0, n_classes=N_CLASSES):
    return build_1dcnn(config or DEFAULT_BACKBONE, task, seed, n_classes)


MODEL_REGISTRY = {
    "1dcnn": _build_cnn,
    "rnn": _build_recurrent("rnn"),
    "lstm": _build_recurrent("lstm"),
}


def registry_build(name: str, task: str = "classification", seed: int = 0, config=None,
                   n_classes: int = N_CLASSES) -> EcgNet:
    try:
        builder = MODEL_REGISTRY[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {sorted(MODEL_REGISTRY)}") from None
    return builder(config, str(getattr(task, "kind", task)), seed, n_classes)


def model_from_spec(spec: dict) -> EcgNet:
    """Rebuild an (uninitialized-weights) model from its ``spec`` dict."""
    name = spec["name"]
    if name == "1dcnn":
        config = BackboneConfig.from_dict(spec["config"])
        return Cnn1d(config, spec["task"], spec["n_classes"])
    if name in ("rnn", "lstm"):
        return RecurrentNet(name, RecurrentConfig(**spec["config"]), spec["task"], spec["n_classes"])
    raise UnknownModel(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# forward helpers
# ---------------------------------------------------------------------------


def softmax(x) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def forward(model: EcgNet, signals, mode: str = "eval") -> torch.Tensor:
    """Run ``model`` on ``signals`` (array or tensor ``[b, leads, samples]``).

    Eval mode uses stored normalization statistics, disables dropout and
    tracks no gradients.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(signals) if not torch.is_tensor(signals) else signals,
                        dtype=dtype)
    model.train(mode == "train")
    if mode == "train":
        return model(x)
    with torch.no_grad():
        return model(x)


def predict(model: EcgNet, signals, batch_size: int = 64) -> np.ndarray:
    """Eval-mode outputs for a whole array, batched; logits or predictions."""
    outs = [forward(model, signals[i:i + batch_size]).double().numpy()
            for i in range(0, len(signals), batch_size)]
    return np.concatenate(outs)


# ---------------------------------------------------------------------------
# declarative config and summary
# ---------------------------------------------------------------------------


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def load_model_config(path) -> dict:
    """Read an architecture file with ``[backbone]`` and ``[recurrent]`` sections.

    ``blocks`` is a comma-separated list of ``in:mid:out:kernel:pool``.
    Missing keys keep their defaults.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigInvalid(f"cannot read model config {path}")
    return parse_model_config(parser)


def parse_model_config(parser: configparser.ConfigParser) -> dict:
    defaults = BackboneConfig()
    out = {"1dcnn": defaults, "rnn": RecurrentConfig(), "lstm": RecurrentConfig()}
    try:
        if parser.has_section("backbone"):
            sec = parser["backbone"]
            blocks = defaults.blocks
            if "blocks" in sec:
                blocks = tuple(BlockConfig(*(int(v) for v in spec.split(":")))
                               for spec in sec["blocks"].split(",") if spec.strip())
            out["1dcnn"] = BackboneConfig(
                blocks=blocks,
                tail_conv_channels=sec.getint("tail_conv_channels", defaults.tail_conv_channels),
                tail_kernel=sec.getint("tail_kernel", defaults.tail_kernel),
                mlp_hidden=_ints(sec["mlp_hidden"]) if "mlp_hidden" in sec else defaults.mlp_hidden,
                dropout=sec.getfloat("dropout", defaults.dropout),
                n_leads=sec.getint("n_leads", defaults.n_leads),
                n_samples=sec.getint("n_samples", defaults.n_samples),
            )
        if parser.has_section("recurrent"):
            sec = parser["recurrent"]
            rec = RecurrentConfig(
                hidden=sec.getint("hidden", 128),
                layers=sec.getint("layers", 3),
                stride=sec.getint("stride", 10),
                n_leads=sec.getint("n_leads", 8),
                n_samples=sec.getint("n_samples", 5000),
            )
            out["rnn"] = out["lstm"] = rec
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad model config: {exc}") from exc
    return out


def summary(model: nn.Module) -> str:
    """Fixed-width layer table: index, name, type, parameter count, trainable."""
    rows = [f"{'idx':>3}  {'layer':<18} {'type':<12} {'params':>9}  trainable"]
    for info in enumerate_layers(model):
        kind = type(model.get_submodule(info.name)).__name__
        rows.append(f"{info.layer_index:>3}  {info.name:<18} {kind:<12} "
                    f"{info.parameter_count:>9}  {'yes' if info.trainable else 'no'}")
    total = sum(p.numel() for p in model.parameters())
    rows.append(f"total parameters: {total}")
    return "\n".join(rows)
