from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from hetnet.models.experiment import MethodSpec
from hetnet.models.network import NetworkConfig
from hetnet.services.baseline_service import SubgradientConfig
from hetnet.services.dcd_service import DcdOptions
from hetnet.services.joint_service import DirectDualOptions, JointOptions
from hetnet.services.mimo_service import TwoStageOptions, WmmseOptions
from hetnet.services.power_service import NewtonOptions

logger = logging.getLogger(__name__)

SOLVER_SECTIONS: dict[str, type] = {
    "dcd": DcdOptions,
    "subgradient": SubgradientConfig,
    "newton": NewtonOptions,
    "joint": JointOptions,
    "direct_dual": DirectDualOptions,
    "wmmse": WmmseOptions,
    "two_stage": TwoStageOptions,
}
METHOD_SECTION_PREFIX = "method:"
_NONE_WORDS = {"none", "cell", "all"}


class ConfigServiceError(RuntimeError):
    pass


@dataclass(frozen=True)
class HarnessConfig:
    threads: int

    @staticmethod
    def from_env() -> "HarnessConfig":
        raw = os.getenv("HETNET_THREADS")
        if raw is None or not raw.strip():
            return HarnessConfig(threads=os.cpu_count() or 1)
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"HETNET_THREADS must be a positive integer, got {raw!r}") from None
        if threads < 1:
            raise ValueError(f"HETNET_THREADS must be a positive integer, got {raw!r}")
        return HarnessConfig(threads=threads)


def _coerce(name: str, raw: Any, default: Any, optional: bool = False) -> Any:
    if not isinstance(raw, str):
        if isinstance(default, tuple) and isinstance(raw, list):
            return tuple(raw)
        return raw
    text = raw.strip()
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if optional and text.lower() in _NONE_WORDS:
        return None
    try:
        if default is None:
            return int(text) if text.lstrip("+-").isdigit() else float(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {raw!r}") from None
    if isinstance(default, tuple):
        return tuple(int(item) for item in text.split(",") if item.strip())
    return text


def build_options(cls: type, overrides: Mapping[str, Any], base: Optional[Any] = None) -> Any:
    """Instantiate an options dataclass from (possibly string) overrides.

    Unknown keys are rejected; values are parsed according to the field's default.
    """

    base = base if base is not None else cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise ValueError(f"unknown {cls.__name__} option(s): {', '.join(unknown)}")
    values = {}
    for key, raw in overrides.items():
        optional = "Optional" in str(known[key].type)
        values[key] = _coerce(f"{cls.__name__}.{key}", raw, getattr(base, key), optional)
    return dataclasses.replace(base, **values)


@dataclass(frozen=True)
class SolverSettings:
    dcd: DcdOptions = field(default_factory=DcdOptions)
    subgradient: SubgradientConfig = field(default_factory=SubgradientConfig)
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    joint: JointOptions = field(default_factory=JointOptions)
    direct_dual: DirectDualOptions = field(default_factory=DirectDualOptions)
    two_stage: TwoStageOptions = field(default_factory=TwoStageOptions)

    @staticmethod
    def from_sections(sections: Mapping[str, Mapping[str, Any]]) -> "SolverSettings":
        return SolverSettings().with_sections(sections)

    def with_sections(self, sections: Mapping[str, Mapping[str, Any]]) -> "SolverSettings":
        unknown = sorted(set(sections) - set(SOLVER_SECTIONS))
        if unknown:
            raise ValueError(f"unknown solver section(s): {', '.join(unknown)}")
        settings = self
        for name, overrides in sections.items():
            if not overrides:
                continue
            if name == "wmmse":
                wmmse = build_options(WmmseOptions, overrides, settings.two_stage.wmmse)
                two_stage = dataclasses.replace(settings.two_stage, wmmse=wmmse)
                settings = dataclasses.replace(settings, two_stage=two_stage)
            else:
                current = getattr(settings, name)
                updated = build_options(SOLVER_SECTIONS[name], overrides, current)
                settings = dataclasses.replace(settings, **{name: updated})
        return settings


@dataclass(frozen=True)
class ScenarioFile:
    network: NetworkConfig
    solver_options: dict[str, dict[str, str]]
    methods: dict[str, MethodSpec]


def parse_config_text(text: str, *, source: str = "<string>") -> ScenarioFile:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        logger.exception("Failed to parse configuration %s", source)
        raise ConfigServiceError(f"Malformed configuration file: {source}") from exc

    network = NetworkConfig()
    if parser.has_section("network"):
        network = NetworkConfig.model_validate(dict(parser["network"]))
    solver_options: dict[str, dict[str, str]] = {}
    methods: dict[str, MethodSpec] = {}
    for section in parser.sections():
        if section == "network":
            continue
        values = dict(parser[section])
        if section.startswith(METHOD_SECTION_PREFIX):
            label = section[len(METHOD_SECTION_PREFIX):].strip()
            name = values.pop("name", label)
            methods[label] = MethodSpec(name=name, label=label, options=values)
        elif section in SOLVER_SECTIONS:
            solver_options[section] = values
        else:
            raise ValueError(f"unknown configuration section [{section}] in {source}")

    # Parse once so bad values surface before any run starts.
    SolverSettings.from_sections(solver_options)
    return ScenarioFile(network=network, solver_options=solver_options, methods=methods)


def load_config(path: Path) -> ScenarioFile:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        logger.exception("Failed to read configuration %s", path)
        raise ConfigServiceError(f"Cannot read configuration file: {path}") from exc
    return parse_config_text(text, source=str(path))
