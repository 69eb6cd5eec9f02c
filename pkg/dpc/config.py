"""Run configuration: one YAML file per run plus ``--set`` overrides."""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from dpc.errors import ConfigError
from dpc.models.encoders import ImageEncoderConfig, TextEncoderConfig
from dpc.prompting.prompts import AblationFlags
from dpc.prompting.vocab import PLACEHOLDER, TEMPLATE_PRESETS
from dpc.training.optim import Schedule

logger = logging.getLogger(__name__)

THREADS_ENV = "DPC_THREADS"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(Section):
    dim: int = Field(32, ge=1)
    image_size: int = Field(32, ge=1)
    patch_size: int = Field(8, ge=1)
    image_width: int = Field(32, ge=1)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    context_length: int = Field(16, ge=2)
    logit_scale: float = Field(1.0, gt=0)


class PromptSection(Section):
    template: Optional[str] = None
    templates: List[str] = Field(default_factory=lambda: list(TEMPLATE_PRESETS))
    instance_specific: bool = True
    class_specific: bool = True
    normalize_weights: bool = False

    @model_validator(mode="after")
    def _default_template(self) -> "PromptSection":
        if self.template is None:
            if not self.templates:
                raise ValueError("either template or templates must be given")
            self.template = self.templates[0]
        for text in [self.template] + self.templates:
            if text.count(PLACEHOLDER) != 1 or not text.rstrip().endswith(PLACEHOLDER):
                raise ValueError(f"template {text!r} must end with a single {PLACEHOLDER!r}")
        return self

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(self.instance_specific, self.class_specific)


class OptimSection(Section):
    lr0: float = Field(gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    step_size: int = Field(3, ge=1)
    gamma: float = Field(0.9, gt=0, le=1)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(10, ge=1)

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.lr0, self.step_size, self.gamma)


class SeedSection(Section):
    weights: int = Field(0, ge=0)
    data: int = Field(0, ge=0)
    shuffle: int = Field(0, ge=0)


class PreprocessSection(Section):
    size: Optional[int] = Field(None, ge=1)
    mean: List[float] = Field(min_length=3, max_length=3)
    std: List[float] = Field(min_length=3, max_length=3)


class SyntheticSection(Section):
    classes: int = Field(3, ge=2)
    per_class: int = Field(60, ge=2)
    image_size: int = Field(32, ge=1)
    noise: float = Field(0.05, ge=0)
    amplitude: float = Field(0.1, ge=0)
    colour_radius: float = Field(0.3, gt=0, le=0.5)
    neutral_labels: bool = True


class DataSection(Section):
    source: Literal["synthetic", "manifest"] = "synthetic"
    split: List[float] = Field(default_factory=lambda: [0.8, 0.2], min_length=2, max_length=2)
    preprocess: PreprocessSection
    synthetic: SyntheticSection = Field(default_factory=SyntheticSection)
    label_groups: Optional[Dict[str, List[str]]] = None


class PathsSection(Section):
    manifest: Optional[str] = None
    vocab: Optional[str] = None
    encoder_archive: Optional[str] = None
    output_dir: str = "runs"


class GradcheckSection(Section):
    step: float = Field(1e-4, gt=0)
    tolerance: float = Field(1e-4, gt=0)
    samples: Optional[int] = Field(200, ge=1)
    instances: int = Field(4, ge=1)
    corrupt_op: Optional[str] = None
    corrupt_factor: float = 2.0


class RunConfig(Section):
    model: ModelSection = Field(default_factory=ModelSection)
    prompt: PromptSection = Field(default_factory=PromptSection)
    optim: OptimSection
    seeds: SeedSection = Field(default_factory=SeedSection)
    data: DataSection
    paths: PathsSection = Field(default_factory=PathsSection)
    gradcheck: GradcheckSection = Field(default_factory=GradcheckSection)
    _base_dir: Optional[Path] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _cross_checks(self) -> "RunConfig":
        problems = []
        size = self.data.preprocess.size or self.model.image_size
        if size != self.model.image_size:
            problems.append(f"data.preprocess.size {size} differs from model.image_size {self.model.image_size}")
        if self.model.image_size % self.model.patch_size:
            problems.append(f"model.image_size {self.model.image_size} is not a multiple of model.patch_size")
        if self.model.image_width % self.model.heads or self.model.dim % self.model.heads:
            problems.append(f"model.heads {self.model.heads} must divide model.dim and model.image_width")
        if abs(sum(self.data.split) - 1.0) > 1e-9:
            problems.append(f"data.split {self.data.split} does not sum to 1")
        if self.data.source == "manifest" and not self.paths.manifest:
            problems.append("paths.manifest is required when data.source is 'manifest'")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def preprocess_size(self) -> int:
        return self.data.preprocess.size or self.model.image_size

    def image_encoder_config(self) -> ImageEncoderConfig:
        m = self.model
        return ImageEncoderConfig(m.image_size, m.patch_size, m.image_width, m.layers, m.heads, m.dim)

    def text_encoder_config(self, vocab_size: int) -> TextEncoderConfig:
        m = self.model
        return TextEncoderConfig(vocab_size, m.context_length, m.layers, m.heads, m.dim)

    def canonical(self) -> Dict[str, Any]:
        data = self.model_dump(mode="json")
        data["paths"].pop("output_dir")
        return data

    @property
    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_updates(self, **sections: Dict[str, Any]) -> "RunConfig":
        """A validated copy with some section fields replaced."""
        data = self.model_dump()
        for section, values in sections.items():
            data[section].update(values)
        updated = RunConfig.model_validate(data)
        updated._base_dir = self._base_dir
        return updated

    def resolve_path(self, value: Optional[str]) -> Optional[str]:
        """``value`` against the directory of the config file it came from."""
        if value is None or self._base_dir is None or Path(value).is_absolute():
            return value
        return str(self._base_dir / value)


def load_config(path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = yaml.safe_load(file)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML in {path}: {exc}"]) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """``section.key=value`` assignments; values are parsed as YAML scalars or lists."""
    problems = []
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key.strip():
            problems.append(f"override {override!r} is not key=value")
            continue
        *parents, leaf = key.strip().split(".")
        target = data
        for part in parents:
            child = target.setdefault(part, {})
            if not isinstance(child, dict):
                problems.append(f"override {key}: {part} is not a section")
                break
            target = child
        else:
            try:
                target[leaf] = yaml.safe_load(raw)
            except yaml.YAMLError as exc:
                problems.append(f"override {key}: unparseable value {raw!r} ({exc})")
    if problems:
        raise ConfigError(problems)
    return data


def _format_error(error: Dict[str, Any]) -> str:
    location = ".".join(str(part) for part in error["loc"]) or "<root>"
    return f"{location}: {error['msg']}"


def parse_config(path, overrides: Sequence[str] = ()) -> RunConfig:
    data = apply_overrides(load_config(path), overrides)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([_format_error(e) for e in exc.errors()]) from None
    config._base_dir = Path(path).parent
    logger.debug("config %s digest %s", path, config.digest)
    return config


def worker_threads() -> int:
    raw = os.getenv(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError([f"{THREADS_ENV}={raw!r} is not an integer"]) from None