"""Scenario configuration, closed-loop simulation, set rasterization and file output."""

from .config import ScenarioConfig, load_config, parse_config
from .raster import GridSpec, RasterResult, rasterize_sets
from .simulate import ComparisonReport, TrajectoryLog, build_bundle, compare_controllers, run_scenario

__all__ = [
    "ComparisonReport",
    "GridSpec",
    "RasterResult",
    "ScenarioConfig",
    "TrajectoryLog",
    "build_bundle",
    "compare_controllers",
    "load_config",
    "parse_config",
    "rasterize_sets",
    "run_scenario",
]
