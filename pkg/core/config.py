"""
Scenario configuration: flat ``key = value`` files, catalog defaults and overrides
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from model.data_models import Scenario, TimeGrid
from .catalog import SCENARIOS, build_generator, build_losses, build_terminal
from .error_handler import ConfigError

logger = logging.getLogger(__name__)

INT_KEYS = ("n_steps", "N", "d", "seed", "basis_degree", "max_picard_iters")
FLOAT_KEYS = ("T", "picard_tol", "root_tol")
COMPONENT_KEYS = ("generator", "terminal", "losses")


@dataclass
class ScenarioConfig:
    """Validated textual description of one reflected solve."""
    T: float = 1.0
    n_steps: int = 50
    N: int = 1000
    d: int = 1
    seed: int = 0
    basis_degree: int = 4
    picard_tol: float = 1e-6
    max_picard_iters: int = 50
    root_tol: float = 1e-10
    generator: str = "zero"
    generator_params: Dict[str, float] = field(default_factory=dict)
    terminal: str = "affine"
    terminal_params: Dict[str, float] = field(default_factory=dict)
    losses: str = "affine"
    losses_params: Dict[str, float] = field(default_factory=dict)
    scenario: Optional[str] = None
    out: Optional[str] = None

    def validate(self) -> "ScenarioConfig":
        """
        Check numeric ranges

        Raises:
            ConfigError: a value is out of range
        """
        checks = [
            (self.T > 0, "T must be positive"),
            (self.N >= 2, "N must be >= 2"),
            (self.n_steps >= 2, "n_steps must be >= 2"),
            (self.d >= 1, "d must be >= 1"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.basis_degree >= 0, "basis_degree must be >= 0"),
            (self.picard_tol > 0, "picard_tol must be positive"),
            (self.root_tol > 0, "root_tol must be positive"),
            (self.max_picard_iters >= 1, "max_picard_iters must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message, {"scenario": self.scenario})
        return self

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        """Copy with the non-None overrides applied and re-validated."""
        known = {f.name for f in fields(self)}
        changes = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown configuration key '{key}'")
            changes[key] = _coerce(key, value)
        return replace(self, **changes).validate()

    def to_mapping(self) -> Dict[str, str]:
        """Flat key map that load_config reads back to an equal config."""
        mapping: Dict[str, str] = {}
        if self.scenario:
            mapping["scenario"] = self.scenario
        for key in FLOAT_KEYS:
            mapping[key] = repr(float(getattr(self, key)))
        for key in INT_KEYS:
            mapping[key] = str(int(getattr(self, key)))
        for component in COMPONENT_KEYS:
            mapping[component] = getattr(self, component)
            for param, value in sorted(getattr(self, f"{component}_params").items()):
                mapping[f"{component}.{param}"] = repr(float(value))
        return mapping

    def build_scenario(self) -> Scenario:
        """
        Resolve catalog keys into a Scenario

        Raises:
            ConfigError: unknown catalog entry, bad parameter, or invalid model data
        """
        grid = TimeGrid(T=self.T, n_steps=self.n_steps)
        try:
            return Scenario(
                grid=grid, d=self.d, N=self.N, seed=self.seed,
                generator=build_generator(self.generator, self.generator_params),
                terminal=build_terminal(self.terminal, self.terminal_params),
                losses=build_losses(self.losses, self.losses_params, self.T),
                picard_tol=self.picard_tol, max_picard_iters=self.max_picard_iters,
                basis_degree=self.basis_degree, root_tol=self.root_tol,
                name=self.scenario or "custom",
            )
        except ValueError as e:
            raise ConfigError(str(e), {"scenario": self.scenario})


def _coerce(key: str, value: Any) -> Any:
    try:
        if key in INT_KEYS:
            number = float(value)
            if number != int(number):
                raise ValueError
            return int(number)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must be numeric", {"value": value})
    return value


def parse_config_text(text: str) -> Dict[str, str]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped

    Raises:
        ConfigError: a line without '=' or a repeated key
    """
    entries: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", {"line": raw})
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key", {"line": raw})
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        entries[key] = value
    return entries


def config_from_mapping(entries: Mapping[str, Any]) -> ScenarioConfig:
    """
    Build a ScenarioConfig from flat keys

    A ``scenario`` key loads the catalog defaults first; a component key that
    names a different catalog entry discards that component's default parameters.

    Raises:
        ConfigError: unknown key, unknown scenario, or invalid value
    """
    entries = dict(entries)
    name = entries.pop("scenario", None)
    merged: Dict[str, Any] = {}
    if name is not None:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario '{name}'", {"known": sorted(SCENARIOS)})
        merged.update(SCENARIOS[name])
        for component in COMPONENT_KEYS:
            if component in entries and entries[component] != merged.get(component):
                merged = {k: v for k, v in merged.items() if not k.startswith(f"{component}.")}
    merged.update(entries)

    kwargs: Dict[str, Any] = {"scenario": name}
    params: Dict[str, Dict[str, float]] = {c: {} for c in COMPONENT_KEYS}
    for key, value in merged.items():
        prefix, _, param = key.partition(".")
        if param and prefix in COMPONENT_KEYS:
            try:
                params[prefix][param] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"'{key}' must be numeric", {"value": value})
        elif key in INT_KEYS or key in FLOAT_KEYS:
            kwargs[key] = _coerce(key, value)
        elif key in COMPONENT_KEYS or key == "out":
            kwargs[key] = str(value)
        else:
            raise ConfigError(f"unknown configuration key '{key}'")
    for component, values in params.items():
        kwargs[f"{component}_params"] = values
    config = ScenarioConfig(**kwargs).validate()
    logger.debug(f"Configuration resolved: {config.to_mapping()}")
    return config


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Read a configuration file, or a bare catalog scenario name

    Raises:
        ConfigError: file missing or invalid
    """
    path = Path(path)
    if not path.exists():
        if str(path) in SCENARIOS:
            return config_from_mapping({"scenario": str(path)})
        raise ConfigError(f"configuration file not found: {path}")
    return config_from_mapping(parse_config_text(path.read_text(encoding="utf-8")))


def write_config(config: ScenarioConfig, path: Union[str, Path]) -> Path:
    """Write the resolved configuration so it can be reloaded for an audit."""
    path = Path(path)
    lines = ["# resolved scenario configuration"]
    lines += [f"{key} = {value}" for key, value in config.to_mapping().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
