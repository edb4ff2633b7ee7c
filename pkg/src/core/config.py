"""
Application configuration management

`Settings` holds process-wide defaults read from the environment (prefix ``BPTD_``) and an
optional ``.env`` file. `RunConfig` describes a single sampler run; it is read from a flat
``key=value`` file and overridden by command-line flags.
"""
import logging
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)


class AllocationMode(str, Enum):
    """How event tokens are allocated to latent classes"""
    JOINT = "joint"
    COMPOSITIONAL = "compositional"


class ModelTag(str, Enum):
    """Models that can be fit and compared"""
    BPTD = "bptd"
    BPTF = "bptf"
    GPIRM = "gpirm"
    DCGPIRM = "dcgpirm"


class Settings(BaseSettings):
    """
    Process-wide defaults with environment overrides
    """

    model_config = SettingsConfigDict(
        env_prefix="BPTD_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    app_name: str = Field(default="bptd")
    log_level: str = Field(default="INFO")

    # Sampler defaults
    eps0: float = Field(default=0.1, gt=0)
    gamma0_target: float = Field(default=0.01, gt=0)
    threshold_fraction: float = Field(default=0.05, gt=0, lt=1)

    # Execution
    workers: int = Field(default=1, ge=1)
    joint_chunk_elements: int = Field(default=4_000_000, ge=1)
    output_dir: Path = Field(default=Path("runs"))


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance

    Returns:
        Settings: process-wide settings
    """
    return Settings()


def resolve_gamma0(
    n_communities: int,
    n_topics: int,
    n_regimes: int,
    product_target: float = 0.01,
) -> float:
    """
    Solve (γ₀/C)²(γ₀/K)(γ₀/R) = target for γ₀

    The target is the expected magnitude of a core element's prior shape; a small
    value encourages a sparse core tensor.
    """
    if min(n_communities, n_topics, n_regimes) < 1 or product_target <= 0:
        raise ConfigError("resolve_gamma0 needs positive dims and a positive target")
    classes = n_communities * n_communities * n_topics * n_regimes
    return float((product_target * classes) ** 0.25)


def _parse_triple(value: Any) -> Tuple[int, int, int]:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        value = tuple(int(p) for p in parts)
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError("expected three comma-separated integers")
    return value


class RunConfig(BaseModel):
    """
    Configuration of a single fit/evaluate run
    """

    dims: Tuple[int, int, int] = Field(default=(20, 6, 3), description="C,K,R")
    eps0: float = Field(default=0.1, gt=0)
    gamma0: Optional[float] = Field(default=None, gt=0, description="explicit γ₀")
    gamma0_target: float = Field(default=0.01, gt=0)
    fixed_delta: Optional[float] = Field(default=None, gt=0)
    fixed_zeta: Optional[float] = Field(default=None, gt=0)

    model: ModelTag = ModelTag.BPTD
    alloc: AllocationMode = AllocationMode.COMPOSITIONAL
    sweeps: int = Field(default=5000, ge=1)
    burn_in: Optional[int] = Field(default=None, ge=0)
    save_every: int = Field(default=10, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    workers: int = Field(default=1, ge=1)
    threshold_fraction: float = Field(default=0.05, gt=0, lt=1)

    tensor_path: Optional[Path] = None
    out_dir: Path = Path("runs")

    @field_validator("dims", mode="before")
    @classmethod
    def parse_dims(cls, v):
        return _parse_triple(v)

    @field_validator("dims")
    @classmethod
    def validate_dims(cls, v):
        if min(v) < 1:
            raise ValueError("dims must all be positive")
        return v

    @model_validator(mode="after")
    def check_burn_in(self):
        if self.burn_in is not None and self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        return self

    @property
    def effective_burn_in(self) -> int:
        """First half of the sweeps unless set explicitly"""
        return self.sweeps // 2 if self.burn_in is None else self.burn_in

    @property
    def resolved_gamma0(self) -> float:
        if self.gamma0 is not None:
            return self.gamma0
        c, k, r = self.dims
        return resolve_gamma0(c, k, r, self.gamma0_target)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a --seed is required for reproducible runs")
        return self.seed

    @classmethod
    def build(cls, values: Dict[str, Any]) -> "RunConfig":
        """Validate raw values, converting pydantic errors into ConfigError"""
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration: {e}") from e

    @classmethod
    def from_file(cls, path: Optional[Path], **overrides: Any) -> "RunConfig":
        """
        Load a flat key=value config file and apply overrides on top

        Args:
            path: config file, or None to start from defaults and settings
            overrides: values from command-line flags (None entries are ignored)

        Returns:
            RunConfig: validated configuration
        """
        settings = get_settings()
        values: Dict[str, Any] = {
            "eps0": settings.eps0,
            "gamma0_target": settings.gamma0_target,
            "workers": settings.workers,
            "threshold_fraction": settings.threshold_fraction,
            "out_dir": settings.output_dir,
        }
        if path is not None:
            if not Path(path).exists():
                raise ConfigError(f"config file not found: {path}")
            file_values = {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}
            logger.info(f"Loaded {len(file_values)} settings from {path}")
            values.update(file_values)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.build(values)
