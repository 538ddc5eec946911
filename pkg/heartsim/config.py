"""
Configuration management for the heart simulator.
Loads settings from environment variables with sensible defaults.
"""
import os
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

# Repository root (one level above the package)
_REPO_ROOT = Path(__file__).resolve().parent.parent


class SimulationConfig:
    """Numerical defaults for simulation runs."""

    def __init__(self):
        # Fixed grid step; the heart model is tuned at half a microsecond
        self.dt_ms: float = float(os.getenv("HEARTSIM_DT_MS", "0.0005"))

        # Keep every Nth step in recorded traces (20 -> 0.01 ms at the default dt)
        self.decimation: int = int(os.getenv("HEARTSIM_DECIMATION", "20"))

        # rk4 | euler | exponential
        self.integrator: str = os.getenv("HEARTSIM_INTEGRATOR", "rk4")

    def __repr__(self) -> str:
        return (
            f"SimulationConfig(dt_ms={self.dt_ms}, decimation={self.decimation}, "
            f"integrator='{self.integrator}')"
        )


class OutputConfig:
    """Where and how result files are written."""

    def __init__(self):
        self.output_dir: Path = Path(os.getenv("HEARTSIM_OUTPUT_DIR", "output"))
        self.float_format: str = os.getenv("HEARTSIM_FLOAT_FORMAT", "%.6f")

    def __repr__(self) -> str:
        return (
            f"OutputConfig(output_dir='{self.output_dir}', "
            f"float_format='{self.float_format}')"
        )


class DataConfig:
    """Location of shipped data files."""

    def __init__(self):
        default_heart = _REPO_ROOT / "config" / "heart" / "default_heart.json"
        self.heart_file: Path = Path(os.getenv("HEARTSIM_HEART_FILE", str(default_heart)))

    def __repr__(self) -> str:
        return f"DataConfig(heart_file='{self.heart_file}')"


class AppConfig:
    """Application-wide configuration."""

    def __init__(self):
        self.simulation = SimulationConfig()
        self.output = OutputConfig()
        self.data = DataConfig()
        self.log_level: str = os.getenv("LOG_LEVEL", "INFO")

    def __repr__(self) -> str:
        return (
            f"AppConfig(simulation={self.simulation}, output={self.output}, "
            f"data={self.data}, log_level='{self.log_level}')"
        )


# Global config instance (loaded on import)
config = AppConfig()
