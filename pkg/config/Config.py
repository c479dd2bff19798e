import os
from typing import Dict, Any

from dotenv import load_dotenv

# Load environment variables from a local .env when present
load_dotenv()

# Get the project root directory
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))


def _readInt(name: str, default: int) -> int:
    """Read a positive integer environment variable, falling back on empty or bad values"""
    raw = os.getenv(name, str(default))
    try:
        value = int(raw) if raw and raw.strip() else default
    except (ValueError, AttributeError):
        value = default
    return value if value > 0 else default


class Config:
    """
    Base configuration class that handles environment variables and provides default values.
    Pipeline hyperparameters live in the JSON pipeline document, not here.
    """

    DEBUG = False
    TESTING = False

    # Worker parallelism cap for per-image map computation and data generation
    RAAD_THREADS = _readInt("RAAD_THREADS", 1)

    # Logging settings
    LOG_LEVEL = os.getenv("RAAD_LOG_LEVEL", "INFO")
    LOG_DIR = os.getenv("RAAD_LOG_DIR", os.path.join(PROJECT_ROOT, "logs"))

    # Default output directory when --out is not given
    OUTPUT_DIR = os.getenv("RAAD_OUTPUT_DIR", os.path.join(PROJECT_ROOT, "runs", "default"))

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert configuration to dictionary.

        Returns:
            Dict[str, Any]: Configuration dictionary
        """
        return {
            "DEBUG": self.DEBUG,
            "TESTING": self.TESTING,
            "RAAD_THREADS": self.RAAD_THREADS,
            "LOG_LEVEL": self.LOG_LEVEL,
            "LOG_DIR": self.LOG_DIR,
            "OUTPUT_DIR": self.OUTPUT_DIR,
        }


class DevelopmentConfig(Config):
    """
    Development configuration.
    """

    DEBUG = True
    LOG_LEVEL = os.getenv("RAAD_LOG_LEVEL", "DEBUG")


class ProductionConfig(Config):
    """
    Production configuration: batch runs on a workstation.
    """

    LOG_LEVEL = os.getenv("RAAD_LOG_LEVEL", "INFO")


def get_config() -> Config:
    """
    Get the appropriate configuration based on environment.

    Returns:
        Config: Configuration instance
    """
    env = os.getenv("RAAD_ENV", "production")
    if env == "development":
        return DevelopmentConfig()
    return ProductionConfig()
