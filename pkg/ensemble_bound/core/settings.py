from functools import lru_cache
from typing import Literal, Optional

from pydantic import ConfigDict, field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Library and CLI settings, read from ``CB_ENSEMBLE_*`` variables."""

    PROJECT_NAME: str = "ensemble-bound"
    VERSION: str = "0.1.0"
    DESCRIPTION: str = "Label-free combinatorial mistake bounds for ensembles"

    ENV_MODE: Literal["development", "testing", "production"] = "development"

    # Logging settings
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "WARNING"
    LOG_FILE: Optional[str] = None

    # Reproducibility
    SEED: Optional[int] = None

    # Parallelism (None means the machine's logical core count)
    THREADS: Optional[int] = None

    # Brute-force oracle guard
    BRUTEFORCE_MAX_CLASSES: int = 5
    BRUTEFORCE_MAX_CELL: int = 8
    BRUTEFORCE_MAX_TOTAL: int = 24
    BRUTEFORCE_MAX_ENUMERATION: int = 2_000_000

    # Exact dynamic program
    DP_MEMORY_BUDGET: int = 256 * 1024 * 1024
    DP_STATE_RECORD_BYTES: int = 64

    # Mistakes multigraph
    EXACT_COVER_MAX_ARCS: int = 8

    # Learner derivation
    PAIR_DRAW_RETRIES: int = 32
    REPRESENTATIVES_PER_CLASS: int = 3

    @field_validator(
        "BRUTEFORCE_MAX_CLASSES",
        "BRUTEFORCE_MAX_CELL",
        "BRUTEFORCE_MAX_TOTAL",
        "BRUTEFORCE_MAX_ENUMERATION",
        "DP_MEMORY_BUDGET",
        "DP_STATE_RECORD_BYTES",
        "PAIR_DRAW_RETRIES",
        "REPRESENTATIVES_PER_CLASS",
    )
    @classmethod
    def check_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("limit must be positive")
        return v

    @field_validator("EXACT_COVER_MAX_ARCS")
    @classmethod
    def check_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("EXACT_COVER_MAX_ARCS must be non-negative")
        return v

    @field_validator("THREADS", mode="before")
    @classmethod
    def parse_threads(cls, v: Optional[str | int]) -> Optional[int]:
        if v is None or v == "":
            return None
        threads = int(v)
        if threads < 1:
            raise ValueError("THREADS must be at least 1")
        return threads

    @field_validator("SEED", mode="before")
    @classmethod
    def parse_seed(cls, v: Optional[str | int]) -> Optional[int]:
        if v is None or v == "":
            return None
        seed = int(v)
        if seed < 0:
            raise ValueError("SEED must be non-negative")
        return seed

    model_config = ConfigDict(
        env_prefix="CB_ENSEMBLE_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
