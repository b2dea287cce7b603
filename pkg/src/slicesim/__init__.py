"""Deterministic slice bookkeeping for absorbing measurements of a 1D wave packet."""

__version__ = "0.1.0"

from .config import ScenarioConfig, emit_config, load_config, parse_config  # noqa: E402
from .experiments import run_scenario  # noqa: E402
from .report import ScenarioReport, diff_reports  # noqa: E402

__all__ = ["ScenarioConfig", "ScenarioReport", "diff_reports", "emit_config", "load_config", "parse_config",
           "run_scenario", "__version__"]
