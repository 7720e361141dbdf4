"""
Configuration layer.

Settings come from the environment (.env supported), run configuration from JSON
files merged with command-line overrides. Precedence: flags > file > environment > defaults.
"""

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigurationError
from app.models import SynthSpec

logger = logging.getLogger(__name__)

BaselineName = Literal["none", "concat-zero", "concat-learned", "image-only", "metadata-only"]
LabelMode = Literal["joint", "multilabel"]

RESOLVED_CONFIG_NAME = "resolved_config.json"


class Settings(BaseSettings):
    """Environment-driven settings (prefix SERIESCLF_)"""
    model_config = SettingsConfigDict(env_prefix="SERIESCLF_", env_file=".env", extra="ignore")

    data_root: Optional[Path] = None
    runs_dir: Path = Path("runs")
    log_level: str = "INFO"
    num_workers: int = 0


@lru_cache
def get_settings() -> Settings:
    return Settings()


class ModelConfig(BaseModel):
    """Architecture dimensions (d_v=256, d_m=128, d_o=128 by default)."""
    backbone: Literal["small_cnn", "densenet121"] = "small_cnn"
    visual_dim: int = Field(256, ge=1)
    metadata_dim: int = Field(128, ge=1)
    dictionary_dim: int = Field(64, ge=1)
    fusion_dim: int = Field(256, ge=1)
    output_dim: int = Field(128, ge=1)
    heads: int = Field(4, ge=1)
    ff_expansion: int = Field(4, ge=1)
    max_slices: int = Field(64, ge=1)
    use_positional: bool = True
    pool_hidden: int = Field(64, ge=1)
    imputer_hidden: int = Field(128, ge=1)

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        for name in ("visual_dim", "fusion_dim"):
            if getattr(self, name) % self.heads != 0:
                raise ConfigurationError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        return self


class TrainConfig(BaseModel):
    """Training recipe: AdamW, warmup + cosine schedule, element-wise gradient clamping."""
    slices: Optional[int] = Field(None, ge=1)
    base_lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    warmup_fraction: float = 0.10
    clip_lo: float = -0.5
    clip_hi: float = 0.5
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(30, ge=1)
    seed: int = 0
    mode: LabelMode = "joint"
    baseline: BaselineName = "none"
    class_weighting: bool = False
    refit_normalization: bool = True
    val_folds: int = Field(5, ge=2)
    num_workers: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainConfig":
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigurationError(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")
        if self.clip_lo >= self.clip_hi:
            raise ConfigurationError(f"clip_lo ({self.clip_lo}) must be below clip_hi ({self.clip_hi})")
        return self

    @property
    def resolved_slices(self) -> int:
        if self.slices is not None:
            return self.slices
        if self.baseline in ("concat-zero", "concat-learned"):
            return 3
        if self.baseline == "image-only":
            return 1
        return 10


class RunConfig(BaseModel):
    """Fully resolved configuration of one command invocation"""
    command: str = "train"
    out_dir: Path = Path("runs/latest")
    data_root: Optional[Path] = None
    labels_file: Optional[Path] = None
    val_data_root: Optional[Path] = None
    schema_path: Optional[Path] = None
    synth: Optional[SynthSpec] = None
    resume: Optional[Path] = None
    folds: int = Field(5, ge=2)
    checkpoint: Optional[Path] = None
    series_dir: Optional[Path] = None
    label_map: Optional[Literal["duke"]] = None
    target: Optional[Path] = None
    workers: int = Field(1, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge overrides into base; None values in overrides are ignored."""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(config_path: Optional[Path], overrides: Dict[str, Any],
                    settings: Optional[Settings] = None) -> RunConfig:
    """
    Build a RunConfig from an optional JSON file plus command-line overrides.

    Args:
        config_path: JSON config file (may be None)
        overrides: nested dict of flag values; None entries do not override
        settings: environment settings, used for the default data root and run directory
    """
    settings = settings or get_settings()
    raw: Dict[str, Any] = {}
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.is_file():
            raise ConfigurationError(f"Config file not found: {config_path}")
        raw = json.loads(config_path.read_text(encoding="utf-8"))
        logger.info(f"Loaded config file {config_path}")

    if raw.get("data_root") is None and raw.get("synth") is None and settings.data_root is not None:
        raw["data_root"] = str(settings.data_root)
    if settings.num_workers:
        raw.setdefault("train", {}).setdefault("num_workers", settings.num_workers)

    merged = deep_merge(raw, overrides)
    if merged.get("out_dir") is None:
        merged["out_dir"] = str(settings.runs_dir / merged.get("command", "latest"))
    return RunConfig.model_validate(merged)


def write_resolved_config(config: RunConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text(config.model_dump_json(indent=2), encoding="utf-8")
    return path
