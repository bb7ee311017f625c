"""Run configuration and its flat ``key = value`` file format.

A config file is INI-style (``[section]`` headers, ``key = value`` lines)::

    [run]
    method = pc
    seeds = 0, 1, 2

    [train]
    T_train = 5
    alpha = 0.1

An optional ``[grid]`` section lists comma-separated values for dotted keys
(``train.alpha = 0.05, 0.1``) and is read by the ``grid`` subcommand.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .dynamics import TrainConfig
from .inits import InitStrategy

PRESETS = {
    # hidden widths; input/output widths come from the dataset
    "mlp5": {"hidden": [512, 512, 512, 512], "task": "classify"},
    "decoder4": {"latent": 64, "hidden": [256, 256, 256], "task": "reconstruct"},
}


@dataclass
class ModelConfig:
    preset: str = "mlp5"
    activation: str = "tanh"
    output_activation: str = "identity"
    dtype: str = "float32"


@dataclass
class DataConfig:
    dataset: str = "mnist"
    data_dir: str = ""
    fraction: float = 1.0
    batching: str = "auto"        # auto | stream | shuffled
    eval_limit: int = 0           # 0 = whole test split
    synthetic_per_class: int = 200
    synthetic_classes: int = 10
    synthetic_dim: int = 20
    synthetic_separation: float = 3.0


@dataclass
class MemoryConfig:
    patterns: int = 24
    embed: int = 128
    delta: float = 200.0
    heads: int = 16


@dataclass
class RunConfig:
    run_id: str = "run"
    method: str = "pc"
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs/run"
    bp_loss: str = "mse"
    eval_every_batches: int = 0
    checkpoint: bool = True
    record_wall_time: bool = True
    init: InitStrategy = field(default_factory=InitStrategy)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)

    def validate(self) -> "RunConfig":
        if self.method not in ("pc", "bp"):
            raise ValueError(f"method must be pc or bp, got {self.method!r}")
        if self.model.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.model.preset!r}; expected one of {sorted(PRESETS)}")
        if self.data.batching not in ("auto", "stream", "shuffled"):
            raise ValueError(f"unknown batching {self.data.batching!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.train.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.bp_loss not in ("mse", "ce"):
            raise ValueError(f"unknown BP loss {self.bp_loss!r}")
        if self.task == "reconstruct" and self.method == "pc" and self.init.kind == "forward":
            from .inits import InfeasibleInitError

            raise InfeasibleInitError(
                "forward initialization is impossible on the decoder preset: its root layer h_0 is free"
            )
        if self.init.kind == "average" and self.task != "classify":
            raise ValueError("average initialization needs class labels (classification only)")
        if self.memory.heads < 1 or self.memory.embed % self.memory.heads:
            raise ValueError(f"memory.embed={self.memory.embed} must split evenly into memory.heads={self.memory.heads}")
        return self

    @property
    def task(self) -> str:
        return PRESETS[self.model.preset]["task"]

    @property
    def batching(self) -> str:
        if self.data.batching != "auto":
            return self.data.batching
        return "stream" if (self.method == "pc" and self.init.kind == "average") else "shuffled"


SECTIONS = {"run": None, "init": "init", "model": "model", "data": "data", "train": "train", "memory": "memory"}
# file/CLI names for InitStrategy fields
_INIT_KEYS = {"kind": "kind", "a": "a", "b": "b", "m": "m", "memory_mode": "memory_mode"}


def _section_obj(cfg: RunConfig, section: str):
    return cfg if SECTIONS[section] is None else getattr(cfg, SECTIONS[section])


def _fields(obj) -> dict:
    return {f.name: f for f in dataclasses.fields(obj) if not dataclasses.is_dataclass(getattr(obj, f.name))}


def _format(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(_format(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_like(current, text: str, name: str):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (list, tuple)):
        items = [t.strip() for t in text.split(",") if t.strip()]
        sample = current[0] if current else 0
        vals = [_parse_like(sample, t, name) for t in items]
        return tuple(vals) if isinstance(current, tuple) else vals
    if current is None:
        # optional numeric fields (init.m, train.alpha_eval)
        try:
            return int(text)
        except ValueError:
            return float(text)
    return text


def set_key(cfg: RunConfig, dotted: str, value) -> RunConfig:
    """Set ``section.key`` (or a bare run-level key) from a string or value."""
    section, _, key = dotted.rpartition(".")
    section = section or "run"
    if section not in SECTIONS:
        raise KeyError(f"unknown config section {section!r}")
    obj = _section_obj(cfg, section)
    if key not in _fields(obj):
        raise KeyError(f"unknown config key {dotted!r}")
    cur = getattr(obj, key)
    if isinstance(value, str):
        value = _parse_like(cur, value, dotted)
    setattr(obj, key, value)
    if section == "init":
        obj.__post_init__()
    return cfg


def to_text(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = _section_obj(cfg, section)
        lines.append(f"[{section}]")
        for name in _fields(obj):
            lines.append(f"{name} = {_format(getattr(obj, name))}")
        lines.append("")
    return "\n".join(lines)


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    return p


def from_text(text: str) -> tuple[RunConfig, dict]:
    """Parse a config file body; returns the config and its ``[grid]`` space."""
    p = _parser()
    p.read_string(text)
    cfg = RunConfig()
    for section in p.sections():
        if section == "grid":
            continue
        if section not in SECTIONS:
            raise KeyError(f"unknown config section [{section}]")
        for key, value in p.items(section):
            set_key(cfg, f"{section}.{key}", value)
    grid = {}
    if p.has_section("grid"):
        for key, value in p.items("grid"):
            grid[key] = [v.strip() for v in value.split(";" if ";" in value else ",") if v.strip()]
    return cfg, grid


def load_config(path) -> tuple[RunConfig, dict]:
    with open(path) as fh:
        return from_text(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_text(cfg))


def clone(cfg: RunConfig) -> RunConfig:
    return from_text(to_text(cfg))[0]
