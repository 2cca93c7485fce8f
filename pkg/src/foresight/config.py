"""Run configuration shared by every CLI subcommand."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .optim import OPTIMIZERS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data generation
    grammar: str = "disambiguation"       # disambiguation | stochastic | cycle | path to grammar JSON
    grammar_seed: int = 0
    num_classes: int = 8
    num_objects: int = 8
    n_videos: int = 200
    len_min: int = 6
    len_max: int = 10
    feature_dim: int = 32
    noise_sigma: float = 0.1
    train_frac: float = 0.8
    # predictor
    window: int = 3
    horizon: int = 3
    hidden: int = 256
    lstm_layers: int = 2
    fc_layers: int = 2
    dropout: float = 0.2
    use_scene: bool = True
    use_time: bool = True
    unknown_threshold: float = 0.1
    time_weight: float = 1.0
    standardize_time: bool = False
    # captioner
    caption_layers: int = 3
    caption_hidden: int = 1000
    caption_embed: int = 0                # 0 means same as caption_hidden
    vocab_size: int = 20000
    max_decode_len: int = 20
    beam_width: int = 1
    # training
    optimizer: str = "adam"
    lr: float = 1e-3
    clip_norm: float = 0.0                # 0 disables clipping
    epochs: int = 20
    batch_size: int = 128
    caption_batch_size: int = 1000
    seed: int = 0
    # paths
    dataset: str = ""
    checkpoint: str = ""
    report: str = ""

    def validate(self) -> "RunConfig":
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.caption_batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch sizes >= 1")
        if self.num_classes < 2 or self.num_objects < 1:
            raise ConfigError("need at least two classes and one object")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise ConfigError("bad video length range")
        if self.hidden < 1 or self.caption_hidden < 1 or self.caption_layers < 1:
            raise ConfigError("layer sizes must be positive")
        if not 0.0 < self.unknown_threshold < 1.0:
            raise ConfigError("unknown_threshold must be in (0, 1)")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac must be in (0, 1)")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for k, v in d.items():
            typ = known[k].type
            if typ == "bool" and not isinstance(v, bool):
                raise ConfigError(f"{k} must be true or false")
            if typ == "int" and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"{k} must be an integer")
            if typ == "float" and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ConfigError(f"{k} must be a number")
            if typ == "str" and not isinstance(v, str):
                raise ConfigError(f"{k} must be a string")
            kwargs[k] = float(v) if typ == "float" else v
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)
