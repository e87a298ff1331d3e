"""Run configuration: an INI file with ``[data]``, ``[split]``, ``[model]``,
``[training]``, ``[transfer]`` and ``[output]`` sections.

Every key and its default is listed in ``data/defaults.ini``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigInvalid
from .model import MODEL_REGISTRY, load_model_config
from .training import TrainConfig, config_digest

_TRAIN_FLOATS = ("lr", "eps", "gamma")
_TRAIN_INTS = ("patience", "max_epochs", "batch_size", "eval_batch_size", "checkpoint_every")


def defaults_text() -> str:
    return resources.files("ecgtransfer").joinpath("data/defaults.ini").read_text()


@dataclass
class RunConfig:
    real_dir: Optional[Path] = None
    synthetic_dir: Optional[Path] = None
    split_seed: int = 0
    model_name: str = "1dcnn"
    model_config_path: Optional[Path] = None
    training: TrainConfig = field(default_factory=TrainConfig)
    transfer_seeds: tuple = (0,)
    frozen_layers: int = 7
    out_dir: Path = Path("runs")

    def validate(self) -> "RunConfig":
        for name in ("real_dir", "synthetic_dir", "model_config_path"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigInvalid(f"{name} {path} does not exist")
        if self.model_name not in MODEL_REGISTRY:
            raise ConfigInvalid(f"unknown model {self.model_name!r}")
        return self

    def architectures(self) -> dict:
        if self.model_config_path is None:
            return {}
        return load_model_config(self.model_config_path)

    def architecture(self, name: Optional[str] = None):
        return self.architectures().get(name or self.model_name)

    def resolved(self) -> dict:
        """Everything that affects results, with model config contents inlined."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "out_dir"}
        out["training"] = self.training.to_dict()
        for name in ("real_dir", "synthetic_dir"):
            out[name] = str(Path(out[name]).resolve()) if out[name] is not None else None
        arch = self.architectures()
        out["model_config_path"] = {k: v.to_dict() for k, v in arch.items()} if arch else None
        out["transfer_seeds"] = list(self.transfer_seeds)
        return out

    def digest(self) -> str:
        return config_digest(self.resolved())


def _path(value: str, base: Path) -> Optional[Path]:
    value = value.strip()
    if not value:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def parse_run_config(text: str, base_dir=".") -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(defaults_text())
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(str(exc)) from exc
    base = Path(base_dir)
    try:
        train_kwargs = {}
        sec = parser["training"]
        for key in _TRAIN_FLOATS:
            train_kwargs[key] = sec.getfloat(key)
        for key in _TRAIN_INTS:
            train_kwargs[key] = sec.getint(key)
        train_kwargs["betas"] = tuple(float(b) for b in sec["betas"].replace(",", " ").split())
        train_kwargs["standardize_targets"] = sec.getboolean("standardize_targets")
        stop_at = sec.get("stop_at", "").strip()
        train_kwargs["stop_at"] = float(stop_at) if stop_at else None
        cfg = RunConfig(
            real_dir=_path(parser["data"]["real"], base),
            synthetic_dir=_path(parser["data"]["synthetic"], base),
            split_seed=parser["split"].getint("seed"),
            model_name=parser["model"]["name"].strip(),
            model_config_path=_path(parser["model"]["config"], base),
            training=TrainConfig(**train_kwargs),
            transfer_seeds=tuple(int(s) for s in parser["transfer"]["seeds"].replace(",", " ").split()),
            frozen_layers=parser["transfer"].getint("frozen_layers"),
            out_dir=_path(parser["output"]["dir"], base) or Path("runs"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigInvalid(f"bad run config: {exc}") from exc
    return cfg


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return parse_run_config("")
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file {path} does not exist")
    return parse_run_config(path.read_text(), base_dir=path.parent)
