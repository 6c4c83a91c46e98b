"""Configuration settings for ttaforge."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables.

    Every field is read from ``TTA_FORGE_<NAME>``; ``TTA_FORGE_SEED`` is the
    seed fallback when neither ``--seed`` nor the config file sets one.
    """

    SEED: int = 0

    # Output locations
    OUT_DIR: str = "results"
    CHECKPOINT_DIR: str = "results/checkpoints"

    # Sweep cells executed concurrently
    WORKERS: int = 1

    LOG_LEVEL: str = "INFO"

    # Remote CSV ingestion
    CSV_TIMEOUT_SECONDS: float = 30.0

    model_config = SettingsConfigDict(
        env_prefix="TTA_FORGE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()
