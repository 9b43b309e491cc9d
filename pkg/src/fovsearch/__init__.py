"""Foveated visual-search simulation: Bayesian, MAP, and Q-network searchers."""

__version__ = "0.1.0"

from .task import (ConfigError, LocationSet, TaskConfig, VisibilityMap,
                   build_location_grid, default_task, eccentricity,
                   load_task_config, save_task_config, visibility)

__all__ = [
    "ConfigError", "LocationSet", "TaskConfig", "VisibilityMap",
    "build_location_grid", "default_task", "eccentricity",
    "load_task_config", "save_task_config", "visibility", "__version__",
]
