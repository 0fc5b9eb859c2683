"""Flat JSON run configuration with an explicit schema version.

One file describes the albedo network, the translator and the optimiser.
Keys are flat (``scale_div``, ``lr_init``, ``translator_num_res_blocks``...)
and unknown keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .losses import LossWeights
from .model import ConfigError, ModelConfig
from .trainer import TrainConfig
from .translator import TranslatorConfig

SCHEMA_VERSION = 1

MODEL_KEYS = ("scale_div", "levels", "input_res", "attn_reduction")
TRANSLATOR_KEYS = ("num_downsamples", "num_res_blocks", "num_disc_scales")
WEIGHT_KEYS = ("alpha", "beta", "gamma", "delta")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "loss_weights")


@dataclass
class RunConfig:
    scale_div: int = 8
    levels: int = 5
    input_res: int = 64
    attn_reduction: int = 8
    num_downsamples: int = 2
    num_res_blocks: int = 3
    num_disc_scales: int = 2
    train: TrainConfig = field(default_factory=TrainConfig.desk)

    def model(self) -> ModelConfig:
        base = ModelConfig.scaled(self.scale_div, levels=self.levels, input_res=self.input_res)
        return ModelConfig.from_dict({**base.to_dict(), "attn_reduction": self.attn_reduction})

    def translator(self) -> TranslatorConfig:
        t = TranslatorConfig.scaled(self.scale_div, self.num_downsamples, self.num_res_blocks)
        return TranslatorConfig.from_dict({**t.to_dict(), "num_disc_scales": self.num_disc_scales})

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        out.update({k: getattr(self, k) for k in MODEL_KEYS})
        out.update({f"translator_{k}": getattr(self, k) for k in TRANSLATOR_KEYS})
        td = self.train.to_dict()
        out.update({k: td[k] for k in TRAIN_KEYS})
        out.update(td["loss_weights"])
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
        known = set(MODEL_KEYS) | {f"translator_{k}" for k in TRANSLATOR_KEYS} | set(TRAIN_KEYS) | set(WEIGHT_KEYS)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        train_kw = {k: d[k] for k in TRAIN_KEYS if k in d}
        weights = {k: d[k] for k in WEIGHT_KEYS if k in d}
        if weights:
            train_kw["loss_weights"] = LossWeights(**weights)
        kw = {k: d[k] for k in MODEL_KEYS if k in d}
        kw.update({k: d[f"translator_{k}"] for k in TRANSLATOR_KEYS if f"translator_{k}" in d})
        try:
            cfg = cls(**kw, train=TrainConfig.desk(**train_kw))
            cfg.model()
            cfg.translator()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)


def paper_config() -> ModelConfig:
    return ModelConfig()
