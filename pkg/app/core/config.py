from pathlib import Path
from typing import Optional

from pydantic import Field, computed_field
from pydantic_settings import BaseSettings, SettingsConfigDict


class PathSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        extra="ignore",
    )
    data_dir: Path = Field(default=Path("data"), alias="LAB_DATA_DIR")
    runs_dir: Path = Field(default=Path("runs"), alias="LAB_RUNS_DIR")

    @computed_field
    def synth_dir(self) -> Path:
        return self.data_dir / "synth"


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        extra="ignore",
    )
    threads: Optional[int] = Field(default=None, alias="LAB_THREADS")
    deterministic: bool = Field(default=True, alias="LAB_DETERMINISTIC")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    workers: int = Field(default=4, alias="LAB_WORKERS")
    # Per-model LRU of frozen-encoder features; 0 disables it
    feature_cache_size: int = Field(default=256, ge=0, alias="LAB_FEATURE_CACHE")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        extra="ignore",
    )

    paths: PathSettings = Field(default_factory=lambda: PathSettings())
    runtime: RuntimeSettings = Field(default_factory=lambda: RuntimeSettings())

    # Slow acceptance runs (overfit sanity) are opt-in
    run_slow: bool = Field(default=False, alias="LAB_RUN_SLOW")


settings = Settings()
