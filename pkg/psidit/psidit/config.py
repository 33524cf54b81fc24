# SPDX-License-Identifier: MIT
"""
Experiment configuration.

A run is fully described by one JSON document. Every section maps onto the dataclass of
the module that consumes it, unknown keys are rejected at every level, and `validate()`
runs each module's own checks before anything is trained.
"""

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
from pathlib import Path
import typing as tp

from .curriculum import MaskScheduleParams
from .degradation import DegradationConfig
from .diffusion import TrainBudget
from .metrics import SSIM_WINDOW
from .models.loaders import (
    ARCHITECTURES,
    _budget_kwargs,
    _degradation_kwargs,
    _psi_dit_kwargs,
    _schedule_kwargs,
)
from .models.mmdit import PsiDitConfig
from .prompts import CAPTION_LEN, VOCAB


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_train: int = 2000
    n_heldout: int = 200
    seed: int = 0
    corpus_dir: str = ""

    def validate(self) -> None:
        if self.n_train < 1 or self.n_heldout < 0:
            raise ValueError(f"need n_train >= 1 and n_heldout >= 0, got {self.n_train}, {self.n_heldout}")


@dataclass
class EvalConfig:
    crop_size: int = 32
    limit: int = 0
    sample_seed: int = 0

    def validate(self) -> None:
        if self.crop_size < SSIM_WINDOW or self.limit < 0:
            raise ValueError(
                f"need crop_size >= {SSIM_WINDOW} (SSIM window) and limit >= 0, got {self.crop_size}, {self.limit}"
            )


def _section(cls, raw: tp.Any, where: str, defaults: tp.Optional[dict] = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**{**(defaults or {}), **raw})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    model: PsiDitConfig = field(default_factory=lambda: PsiDitConfig(**_psi_dit_kwargs))
    schedule: MaskScheduleParams = field(default_factory=lambda: MaskScheduleParams(**_schedule_kwargs))
    degradation: DegradationConfig = field(default_factory=lambda: DegradationConfig(**_degradation_kwargs))
    budget: TrainBudget = field(default_factory=lambda: TrainBudget(**_budget_kwargs))
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    architecture: str = "psi_dit"
    seed: int = 0
    out_dir: str = "runs/default"

    SECTIONS: tp.ClassVar[dict[str, tuple[type, tp.Optional[dict]]]] = {
        "model": (PsiDitConfig, _psi_dit_kwargs),
        "schedule": (MaskScheduleParams, _schedule_kwargs),
        "degradation": (DegradationConfig, _degradation_kwargs),
        "budget": (TrainBudget, _budget_kwargs),
        "data": (DataConfig, None),
        "eval": (EvalConfig, None),
    }

    @classmethod
    def from_dict(cls, raw: tp.Mapping[str, tp.Any]) -> "ExperimentConfig":
        if not isinstance(raw, tp.Mapping):
            raise ConfigError(f"config must be an object, got {type(raw).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        kwargs: dict[str, tp.Any] = {}
        for name, (section_cls, defaults) in cls.SECTIONS.items():
            kwargs[name] = _section(section_cls, raw.get(name), name, defaults)
        for name in ("architecture", "seed", "out_dir"):
            if name in raw:
                kwargs[name] = raw[name]
        return cls(**kwargs)

    def to_dict(self) -> dict[str, tp.Any]:
        out: dict[str, tp.Any] = {}
        for name in self.SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
        out.update(architecture=self.architecture, seed=self.seed, out_dir=self.out_dir)
        return out

    def validate(self) -> "ExperimentConfig":
        try:
            for name in self.SECTIONS:
                getattr(self, name).validate()
        except ValueError as exc:
            raise ConfigError(f"invalid {name}: {exc}") from exc
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}, expected one of {ARCHITECTURES}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.model.image_size % self.degradation.scale:
            raise ConfigError(
                f"image_size {self.model.image_size} is not divisible by degradation scale {self.degradation.scale}"
            )
        if self.model.vocab_size < len(VOCAB) or self.model.text_len < CAPTION_LEN:
            raise ConfigError(
                f"the caption vocabulary needs vocab_size >= {len(VOCAB)} and text_len >= {CAPTION_LEN}"
            )
        if self.eval.crop_size > self.model.image_size:
            raise ConfigError(f"crop_size {self.eval.crop_size} exceeds image_size {self.model.image_size}")
        return self

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def corpus_dir(self) -> Path:
        return Path(self.data.corpus_dir) if self.data.corpus_dir else Path(self.out_dir) / "data"


def load_config(path: tp.Optional[tp.Union[str, Path]] = None) -> ExperimentConfig:
    """Defaults when `path` is None, otherwise the parsed and validated JSON file."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw).validate()
