"""System-level simulator for LTE-Advanced downlink with machine-type devices."""

from .config import DropConfig, parse_config
from .engine import MetricsReport, compute_cdf, run_campaign, run_drop

__all__ = ["DropConfig", "MetricsReport", "compute_cdf", "parse_config", "run_campaign", "run_drop"]
__version__ = "0.1.0"
