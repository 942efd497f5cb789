import json
import logging
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from kwspot.errors import ConfigError
from kwspot.models.configs import ExperimentConfig


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables and .env"""

    # Service settings
    app_name: str = "kwspot"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Experiment defaults
    workdir: str = "exp"
    threads: int = 1
    model_dir: Optional[str] = None

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="KWSPOT_",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )


def load_experiment_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """
    Load an experiment configuration file and apply flag overrides

    Args:
        path: JSON file; None gives the built-in defaults
        overrides: seed, threads, criterion, topology, post (None values are ignored)

    Returns:
        Validated ExperimentConfig
    """
    try:
        if path is None:
            config = ExperimentConfig(workdir=settings.workdir, threads=settings.threads)
        else:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            config = ExperimentConfig.model_validate(raw)
        return config.with_overrides(**overrides)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
