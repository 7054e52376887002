import os
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from pydantic_settings import BaseSettings

LOG_FORMAT: str = '%(asctime)s - %(levelname)s - %(message)s'


@dataclass(frozen=True)
class ProjectConstants:
    """Fixed constants for the spherical segmentation pipeline."""
    BRATS_LABELS: Tuple[int, ...] = (0, 1, 2, 4)
    CHANNEL_NAMES: Tuple[str, ...] = ("t1", "t1ce", "t2", "flair")

    # Default spherical grid (r, theta, phi)
    DEFAULT_N_R: int = 128
    DEFAULT_N_THETA: int = 256
    DEFAULT_N_PHI: int = 128

    # SVOL exchange format
    SVOL_MAGIC: bytes = b"SVOL"
    SVOL_VERSION: int = 1

    # Segmenter exchange directory
    EXCHANGE_INPUT_PATTERN: str = "input_ch{index}.svol"
    EXCHANGE_META: str = "meta.json"
    EXCHANGE_OUTPUT: str = "pred.svol"

    LOG_FILE: str = "sphereseg.log"


class Settings(BaseSettings):
    """Environment-specific settings loaded from .env or environment variables."""
    SPHERESEG_THREADS: int = 1
    SPHERESEG_LOG_LEVEL: str = "INFO"
    SPHERESEG_LOG_DIR: Optional[str] = None

    # Attach constants
    PROJECT: ProjectConstants = ProjectConstants()

    model_config = {
        "env_file": os.path.join(os.path.dirname(__file__), "../../.env"),
        "extra": "ignore",
        "case_sensitive": True,
    }


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    """Configures the root logger once; later calls only adjust the level."""
    level_name = (level or settings.SPHERESEG_LOG_LEVEL).upper()
    log_dir = log_dir or settings.SPHERESEG_LOG_DIR

    handlers = [logging.StreamHandler()]
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(log_dir, settings.PROJECT.LOG_FILE)))

    logging.basicConfig(level=level_name, format=LOG_FORMAT, handlers=handlers)
    logging.getLogger().setLevel(level_name)


# Instantiate for use across the pipeline modules
settings = Settings()
