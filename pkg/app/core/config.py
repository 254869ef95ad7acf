from __future__ import annotations

import functools
import logging
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).resolve().parents[2]

# Load .env file so MLC_* overrides are available before Settings() is built
try:
    from dotenv import load_dotenv
    load_dotenv(PROJECT_ROOT / ".env")
except ImportError:
    pass  # python-dotenv is optional

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"


class Settings(BaseSettings):
    """Process-level knobs read from the environment (prefix ``MLC_``)."""

    model_config = SettingsConfigDict(env_prefix="MLC_", extra="ignore")

    log_level: str = "INFO"
    runs_dir: Path = PROJECT_ROOT / "runs"
    run_slow_tests: bool = False


@functools.lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str | int | None = None) -> None:
    """Install the root handler once; later calls only adjust the level."""
    if level is None:
        level = get_settings().log_level
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    logging.basicConfig(format=LOG_FORMAT, level=level)
    logging.getLogger().setLevel(level)
