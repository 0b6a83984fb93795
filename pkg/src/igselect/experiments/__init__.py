"""Experiment orchestration, reporting, and the command line interface."""

from .config import PipelineConfig, load_config, preset
from .pipeline import ExperimentReport, prepare, run_pipeline, run_validation
from .report import emit_report

__all__ = ["PipelineConfig", "load_config", "preset", "ExperimentReport", "prepare",
           "run_pipeline", "run_validation", "emit_report"]
