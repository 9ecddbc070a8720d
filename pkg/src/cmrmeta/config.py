"""Experiment configuration files (TOML) and their schema.

Every key has a default, so an empty file is a valid configuration; unknown
keys are rejected. Validation errors name the offending field and, where it
can be located, its line in the file.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Literal

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import CorpusConfig, ParamRanges
from .kspace import CLASS_ORDER, ArtefactClass
from .meta import MetaConfig
from .nn import ModelSpec

CLASS_NAMES = tuple(c.value for c in CLASS_ORDER)

# the four prior / fine-tune partitions of the published experiment table
TABLE1 = (
    ("experiment1", ("RespiratoryMotion", "Gibbs", "ArtefactFree"), ("Aliasing", "CardiacMotion")),
    ("experiment2", ("RespiratoryMotion", "CardiacMotion", "ArtefactFree"), ("Aliasing", "Gibbs")),
    ("experiment3", ("RespiratoryMotion", "Aliasing", "ArtefactFree"), ("CardiacMotion", "Gibbs")),
    ("experiment4", ("RespiratoryMotion", "ArtefactFree"), ("Aliasing", "CardiacMotion", "Gibbs")),
)


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RangesSection(_Section):
    translation_px: tuple[int, int] = (2, 6)
    sine_duty: tuple[float, float] = (0.3, 0.6)
    sine_period: tuple[float, float] = (6.0, 16.0)
    gibbs_keep_fraction: tuple[float, float] = (0.2, 0.5)
    aliasing_factor: int = Field(2, ge=2)


class CorpusSection(_Section):
    per_class_count: int = Field(512, ge=1)
    image_size: int = 64
    cine_frames: int = Field(16, ge=2)
    rng_seed: int = 0
    param_ranges: RangesSection = RangesSection()

    @field_validator("image_size")
    @classmethod
    def _pow2(cls, v):
        if v < 32 or v & (v - 1):
            raise ValueError("must be a power of two >= 32")
        return v

    def build(self, seed_offset: int = 0) -> CorpusConfig:
        return CorpusConfig(self.per_class_count, self.image_size, self.cine_frames,
                            ParamRanges(**self.param_ranges.model_dump()), self.rng_seed + seed_offset)


class ModelSection(_Section):
    conv_channels: tuple[int, ...] = (8, 16, 32)
    head_widths: tuple[int, ...] = (128, 64)
    final_relu: bool = True
    dtype: Literal["float32", "float64"] = "float32"

    def build(self, input_size: int, n_out: int = 2) -> ModelSpec:
        return ModelSpec(input_size=input_size, n_out=n_out, conv_channels=tuple(self.conv_channels),
                         head_widths=tuple(self.head_widths), final_relu=self.final_relu, dtype=self.dtype)


class MetaSection(_Section):
    inner_lr: float = Field(1e-4, ge=0)
    outer_lr: float = Field(1.0, gt=0, le=1)
    outer_lr_final: float | None = Field(None, ge=0, le=1)
    inner_steps_support: int = Field(1, ge=1)
    inner_steps_query: int = Field(1, ge=1)
    batch: int = Field(64, ge=1)
    epochs: int = Field(30, ge=1)
    support_fraction: float = Field(0.5, gt=0, lt=1)
    finetune_lr: float = Field(1e-4, ge=0)
    finetune_epochs: int | None = Field(None, ge=1)
    head_only: bool = False
    outer_k: Literal["present", "all"] = "present"

    def build(self, seed: int) -> MetaConfig:
        return MetaConfig(seed=seed, **self.model_dump())


class ExperimentDef(_Section):
    name: str
    prior_classes: tuple[str, ...]
    finetune_classes: tuple[str, ...]

    @field_validator("prior_classes", "finetune_classes")
    @classmethod
    def _known(cls, v):
        if not v:
            raise ValueError("must name at least one class")
        return tuple(ArtefactClass.parse(c).value for c in v)

    @model_validator(mode="after")
    def _disjoint(self):
        overlap = set(self.prior_classes) & set(self.finetune_classes)
        if overlap:
            raise ValueError(f"prior and fine-tune classes overlap: {sorted(overlap)}")
        return self


class RunSection(_Section):
    builtin: Literal["table1", "experiment1", "none"] = "experiment1"
    experiments: list[ExperimentDef] = []
    budgets: list[int] = [64, 128, 256]
    modes: list[Literal["M1", "M2", "M3"]] = ["M1", "M2", "M3"]
    seeds: list[int] = [0, 1, 2, 3, 4]

    @field_validator("budgets")
    @classmethod
    def _positive(cls, v):
        if not v or any(b < 1 for b in v):
            raise ValueError("budgets must be positive")
        return v


class Config(_Section):
    run: RunSection = RunSection()
    corpus: CorpusSection = CorpusSection()
    model: ModelSection = ModelSection()
    meta: MetaSection = MetaSection()

    @model_validator(mode="after")
    def _budgets_fit(self):
        if max(self.run.budgets) > self.corpus.per_class_count:
            raise ValueError("every budget must be <= corpus.per_class_count")
        if not self.experiment_list():
            raise ValueError("no experiments: set run.builtin or list run.experiments")
        return self

    def experiment_list(self) -> list[ExperimentDef]:
        out = []
        if self.run.builtin == "table1":
            out += [ExperimentDef(name=n, prior_classes=p, finetune_classes=f) for n, p, f in TABLE1]
        elif self.run.builtin == "experiment1":
            n, p, f = TABLE1[0]
            out.append(ExperimentDef(name=n, prior_classes=p, finetune_classes=f))
        return out + list(self.run.experiments)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _line_of(text: str, loc: tuple) -> int | None:
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    pattern = re.compile(rf"^\s*{re.escape(keys[-1])}\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        if pattern.match(line):
            return i
    return None


def parse_config(text: str, source: str = "<config>") -> Config:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    try:
        return Config.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            field = ".".join(str(p) for p in err["loc"]) or "<root>"
            line = _line_of(text, err["loc"])
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: Config) -> str:
    data = cfg.model_dump(mode="json", exclude_none=True)
    return tomli_w.dumps(data)
