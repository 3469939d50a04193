"""Process settings."""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Process settings read from the environment."""
    # Project paths
    TEMPLATES_DIR: Path = Path(os.getenv("DING_TEMPLATES_DIR", Path(__file__).parent.parent / "templates"))
    OUTPUT_DIR: str = os.getenv("DING_OUTPUT_DIR", "results")

    # Execution
    WORKERS: int = int(os.getenv("DING_WORKERS", "1"))
    PROGRESS: bool = os.getenv("DING_PROGRESS", "1").lower() not in ("0", "false", "no", "off")

    # Logging
    LOG_LEVEL: str = os.getenv("DING_LOG_LEVEL", "INFO").upper()


settings = Settings()
