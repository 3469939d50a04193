"""Shared dependencies for CLI commands."""

from functools import lru_cache
from typing import Optional

from cli.config import settings
from src.models import ExperimentConfig
from src.parser import ExperimentParser
from src.rng import derive_rng
from src.storage import ResultStorage

__all__ = ["derive_rng", "get_storage", "load_config", "resolve_output_dir", "resolve_workers"]


@lru_cache()
def get_storage(output_dir: str) -> ResultStorage:
    """Get cached result storage for an output directory.

    Returns:
        ResultStorage: One instance per directory
    """
    templates = settings.TEMPLATES_DIR
    return ResultStorage(output_dir, str(templates) if templates.exists() else None)


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Parse a config file, applying the ``--seed`` override to the master seed."""
    config = ExperimentParser.from_file(path)
    if seed is not None:
        config.seed = seed
    return config


def resolve_output_dir(config: ExperimentConfig, out: Optional[str]) -> str:
    """``--out`` beats ``output.dir`` beats ``DING_OUTPUT_DIR``."""
    return out or config.output.dir or settings.OUTPUT_DIR


def resolve_workers(workers: Optional[int]) -> int:
    return max(1, workers if workers is not None else settings.WORKERS)
