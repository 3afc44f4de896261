"""Command-line interface and experiment orchestration."""

from volclf.cli.config import APPROACHES, ExperimentConfig, UnitOptions, task_classes
from volclf.cli.main import main

__all__ = ["APPROACHES", "ExperimentConfig", "UnitOptions", "main", "task_classes"]
