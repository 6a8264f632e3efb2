"""Run configuration: INI-style sections of key = value lines.

Sections are ``[model]``, ``[train]``, ``[data]`` and one ``[appliance.NAME]``
per target appliance. Every key is optional; :func:`reference_page` lists the
defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError
from .model import DEFAULT_APPLIANCES, Appliance, ModelConfig
from .train import TrainConfig

DEFAULT_ALIASES = {
    "fridge": ["fridge_freezer", "freezer"],
    "dish_washer": ["dishwasher"],
    "washing_machine": ["washer_dryer"],
}


@dataclass
class DataConfig:
    period: float = 6.0
    train_stride: int = 0  # 0 means one window length
    test_stride: int = 0
    train_houses: Tuple[str, ...] = ("1", "3", "4", "5")
    unseen_houses: Tuple[str, ...] = ("2",)
    seen_fraction: float = 0.2

    def validate(self) -> None:
        if self.period <= 0:
            raise ConfigError("data.period must be positive")
        if self.train_stride < 0 or self.test_stride < 0:
            raise ConfigError("data strides must be >= 0")
        if not 0 <= self.seen_fraction < 1:
            raise ConfigError("data.seen_fraction must lie in [0, 1)")
        if set(self.train_houses) & set(self.unseen_houses):
            raise ConfigError("data.train_houses and data.unseen_houses overlap")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    aliases: Dict[str, List[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_ALIASES.items()})

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.data.validate()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        data = {f.name: getattr(self.data, f.name) for f in fields(self.data)}
        data["train_houses"] = list(self.data.train_houses)
        data["unseen_houses"] = list(self.data.unseen_houses)
        return {
            "model": self.model.to_dict(),
            "train": {f.name: getattr(self.train, f.name) for f in fields(self.train)},
            "data": data,
            "aliases": self.aliases,
        }


def _list(text: str) -> List[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _optional(cast):
    def conv(text):
        return None if text.strip().lower() in ("", "none", "off") else cast(text)
    return conv


_MODEL_KEYS = {
    "window_len": int, "d_model": int, "n_heads": int, "n_layers": int, "d_ff": int,
    "scales": lambda s: tuple(int(x) for x in _list(s)), "kernel_size": int, "dropout": float,
}
_TRAIN_KEYS = {
    "lr": float, "batch_size": int, "epochs": int, "state_weight": float, "beta1": float,
    "beta2": float, "eps": float, "val_fraction": float, "seed": int,
    "patience": _optional(int), "clip_norm": _optional(float),
}
_DATA_KEYS = {
    "period": float, "train_stride": int, "test_stride": int,
    "train_houses": lambda s: tuple(_list(s)), "unseen_houses": lambda s: tuple(_list(s)),
    "seen_fraction": float,
}
_APPLIANCE_KEYS = {"max_power", "on_threshold", "aliases"}


def _section(cp, name, keys, where) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp[name].items():
        if key not in keys:
            raise ConfigError(f"{where}: unknown key [{name}] {key}")
        try:
            out[key] = keys[key](raw)
        except ValueError:
            raise ConfigError(f"{where}: bad value for [{name}] {key}: {raw!r}") from None
    return out


def parse_config(text: str, where: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc}") from None
    known = {"model", "train", "data"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("appliance."):
            raise ConfigError(f"{where}: unknown section [{sec}]")

    aliases = {k: list(v) for k, v in DEFAULT_ALIASES.items()}
    apps = []
    for sec in cp.sections():
        if not sec.startswith("appliance."):
            continue
        name, s = sec.split(".", 1)[1], cp[sec]
        extra = set(s) - _APPLIANCE_KEYS
        if extra:
            raise ConfigError(f"{where}: unknown key [{sec}] {sorted(extra)[0]}")
        try:
            apps.append(Appliance(name, float(s["max_power"]), float(s["on_threshold"])))
        except KeyError as exc:
            raise ConfigError(f"{where}: [{sec}] needs {exc.args[0]}") from None
        except ValueError:
            raise ConfigError(f"{where}: [{sec}] has a non-numeric value") from None
        if "aliases" in s:
            aliases[name] = _list(s["aliases"])

    model_kw = _section(cp, "model", _MODEL_KEYS, where)
    train_kw = _section(cp, "train", _TRAIN_KEYS, where)
    data_kw = _section(cp, "data", _DATA_KEYS, where)
    cfg = RunConfig(
        model=ModelConfig(**model_kw, appliances=tuple(apps) if apps else DEFAULT_APPLIANCES,
                          seed=train_kw.get("seed", 0)),
        train=TrainConfig(**train_kw),
        data=DataConfig(**data_kw),
        aliases=aliases,
    )
    cfg.validate()
    return cfg


def load_config(path: Optional[Path]) -> RunConfig:
    """Parse ``path``; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the format :func:`parse_config` reads."""
    m, t, d = cfg.model, cfg.train, cfg.data
    opt = lambda v: "none" if v is None else f"{v:g}"  # noqa: E731
    lines = [
        "[model]",
        f"window_len = {m.window_len}", f"d_model = {m.d_model}", f"n_heads = {m.n_heads}",
        f"n_layers = {m.n_layers}", f"d_ff = {m.d_ff}", f"scales = {', '.join(map(str, m.scales))}",
        f"kernel_size = {m.kernel_size}", f"dropout = {m.dropout:g}", "",
        "[train]",
        f"lr = {t.lr:g}", f"batch_size = {t.batch_size}", f"epochs = {t.epochs}",
        f"state_weight = {t.state_weight:g}", f"beta1 = {t.beta1:g}", f"beta2 = {t.beta2:g}",
        f"eps = {t.eps:g}", f"val_fraction = {t.val_fraction:g}", f"seed = {t.seed}",
        f"patience = {opt(t.patience)}", f"clip_norm = {opt(t.clip_norm)}", "",
        "[data]",
        f"period = {d.period:g}", f"train_stride = {d.train_stride}", f"test_stride = {d.test_stride}",
        f"train_houses = {', '.join(d.train_houses)}", f"unseen_houses = {', '.join(d.unseen_houses)}",
        f"seen_fraction = {d.seen_fraction:g}", "",
    ]
    for a in m.appliances:
        lines += [f"[appliance.{a.name}]", f"max_power = {a.max_power:g}", f"on_threshold = {a.on_threshold:g}"]
        if cfg.aliases.get(a.name):
            lines.append(f"aliases = {', '.join(cfg.aliases[a.name])}")
        lines.append("")
    return "\n".join(lines)


_NOTES = {
    "window_len": "timesteps per window (6 s each)",
    "d_model": "embedding width; even",
    "n_heads": "attention heads; must divide d_model",
    "n_layers": "pre-norm transformer blocks",
    "d_ff": "feed-forward hidden width",
    "scales": "pyramid pooling scales, strictly increasing",
    "kernel_size": "odd convolution kernel of the input embedding",
    "dropout": "dropout rate during training",
    "lr": "Adam learning rate",
    "batch_size": "windows per optimiser step",
    "epochs": "passes over the training windows",
    "state_weight": "weight of the on/off cross-entropy term",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "eps": "Adam denominator guard",
    "val_fraction": "share of training windows held out for validation",
    "seed": "seed for initialisation, shuffling, dropout and the split",
    "patience": "stop after this many epochs without validation gain; none disables",
    "clip_norm": "global gradient-norm clip; none disables",
    "period": "alignment grid in seconds",
    "train_stride": "offset between training windows; 0 means window_len",
    "test_stride": "offset between evaluation windows; 0 means window_len",
    "train_houses": "houses used for training and the seen scenario",
    "unseen_houses": "houses held out for the unseen scenario",
    "seen_fraction": "final share of each training house kept for the seen scenario",
}


def reference_page() -> str:
    """Plain-text page listing every key with its default."""
    lines = ["Configuration reference", "=======================", "",
             "Sections hold `key = value` lines; every key is optional.", ""]
    body = dump_config(RunConfig())
    for line in body.splitlines():
        key = line.split("=", 1)[0].strip()
        note = _NOTES.get(key)
        lines.append(f"{line:<36}# {note}" if note and "=" in line else line)
    lines += ["Appliance sections take max_power (W), on_threshold (W) and an optional",
              "comma list of aliases matched against household manifest keys.", ""]
    return "\n".join(lines)
