"""Application configuration management."""

import math
from functools import lru_cache
from pathlib import Path
from typing import Any, List, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, TomlConfigSettingsSource

from app.errors import ConfigError
from app.models.enums import ExperimentKind, LevelRule, SyntheticLaw


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    # Application
    app_name: str = "offerset-lss"
    log_level: str = "INFO"
    log_json: bool = False

    # Processing Settings
    max_workers: int = 4
    max_hash_bits: int = 4096
    oracle_guard: int = 10_000_000

    # Storage
    index_dir: str = ".cache/indices"

    class Config:
        env_prefix = "OFFERSET_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# ============= Experiment configuration sections =============

class UniverseSection(BaseModel):
    """Synthetic item universe."""

    n: int = Field(50_000, ge=1)
    d: int = Field(50, ge=2)
    law: SyntheticLaw = SyntheticLaw.DISTANCE_UNIFORM
    clusters: int = Field(10, ge=1)
    cluster_spread: float = Field(0.05, gt=0.0)


class ModelSection(BaseModel):
    """Truncated multinomial logit parameters."""

    sigma: float = Field(1.0, gt=0.0)
    w: Optional[float] = Field(10.0, ge=0.0)
    theta: float = Field(math.sqrt(2.0), gt=0.0, le=2.0)
    # When set, w is calibrated per sigma instead of taken from `w`
    target_conversion: Optional[float] = Field(None, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_weight(self) -> "ModelSection":
        if self.w is None and self.target_conversion is None:
            raise ValueError("model.w or model.target_conversion must be set")
        return self


class PlanSection(BaseModel):
    """Level planning for locality-sensitive sampling."""

    beta: float = Field(0.5, ge=0.0, lt=1.0)
    c: float = Field(2.0, gt=1.0)
    delta: Optional[float] = Field(None, gt=0.0, lt=1.0)
    level_rule: LevelRule = LevelRule.DEFINITION
    inflation: float = Field(1.9, ge=1.0)
    enforce_level_guarantee: bool = True
    post_filter: bool = False

    @property
    def effective_delta(self) -> float:
        """Hash-quality exponent; hyperplane hashing admits 1/c."""
        return self.delta if self.delta is not None else 1.0 / self.c


class PruneSection(BaseModel):
    """Pruning and greedy parameters."""

    k: int = Field(10, ge=1)
    epsilon1: float = Field(0.1, gt=0.0, le=1.0)
    epsilon2: float = Field(0.05, gt=0.0, le=1.0)
    sampling_floor: float = Field(0.5, gt=0.0, le=1.0)
    s_override: Optional[int] = Field(None, ge=1)
    samples_per_k: int = Field(4, ge=1)
    lazy: bool = True


class ExperimentSection(BaseModel):
    """Experiment selection and replication."""

    kind: ExperimentKind = ExperimentKind.FIGURE2
    seed: int = Field(0, ge=0, lt=2**64)
    bin_size: int = Field(250, ge=1)
    replications: int = Field(20, ge=2)
    test_mixtures: int = Field(500, ge=1)
    types_per_mixture: int = Field(10, ge=1)
    sigma_grid: List[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0])
    n_grid: List[int] = Field(default_factory=lambda: [2**13, 2**15, 2**17])
    queries_per_n: int = Field(20, ge=1)
    emit_plot: bool = False


class ExperimentConfig(BaseSettings):
    """Full experiment configuration; defaults give the inclusion-curve setup."""

    universe: UniverseSection = Field(default_factory=UniverseSection)
    model: ModelSection = Field(default_factory=ModelSection)
    plan: PlanSection = Field(default_factory=PlanSection)
    prune: PruneSection = Field(default_factory=PruneSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    class Config:
        env_prefix = "OFFERSET_"
        env_nested_delimiter = "__"
        extra = "forbid"

    def flat_items(self) -> List[tuple[str, Any]]:
        """Flatten to dotted `section.key` pairs for report headers."""
        items: List[tuple[str, Any]] = []
        for section, values in self.model_dump(mode="json").items():
            for key, value in values.items():
                items.append((f"{section}.{key}", value))
        return items


def load_experiment_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """Load an experiment configuration from a TOML file.

    Args:
        path: TOML file with `[universe]`, `[model]`, `[plan]`, `[prune]` and
            `[experiment]` sections. Defaults apply when omitted.
        overrides: Section dictionaries merged over the file values.

    Returns:
        Validated configuration

    Raises:
        ConfigError: file missing, unparsable, or failing validation
    """
    values: dict[str, Any] = {}
    if path is not None:
        toml_path = Path(path)
        if not toml_path.is_file():
            raise ConfigError(f"config file not found: {toml_path}")
        try:
            values = dict(TomlConfigSettingsSource(ExperimentConfig, toml_file=toml_path)())
        except Exception as e:
            raise ConfigError(f"could not parse {toml_path}: {e}") from e

    for section, section_values in overrides.items():
        merged = dict(values.get(section, {}))
        merged.update(section_values)
        values[section] = merged

    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
