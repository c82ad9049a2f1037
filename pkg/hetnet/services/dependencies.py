from __future__ import annotations

from pathlib import Path
from typing import Optional

from hetnet.services.config_service import HarnessConfig
from hetnet.services.experiment_service import ExperimentService
from hetnet.services.output_service import OutputConfig, OutputService


def get_harness_config() -> HarnessConfig:
    """Provider for the environment-driven harness settings."""

    return HarnessConfig.from_env()


def get_output_service(directory: Optional[Path]) -> Optional[OutputService]:
    if directory is None:
        return None
    return OutputService(OutputConfig(directory=directory))


def get_experiment_service(outputs: Optional[Path] = None) -> ExperimentService:
    """Provider wiring the harness config and the output writer into the runner."""

    return ExperimentService(config=get_harness_config(), output=get_output_service(outputs))
