"""Run configuration files for the EER CLI.

A run configuration is a flat ``key = value`` document. Every training field
appears under its own name, dynamics fields carry a ``sim_`` prefix, and lists
are comma-separated::

    version = 1
    lr = 0.001
    eval_lengths = 10,100,1000
    sim_beta = 0.1
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from dotenv.parser import parse_stream

from .dynamics import DynamicsParams
from .errors import ConfigError, DomainError
from .training import EERConfig

CONFIG_VERSION = 1

# Flat key -> DynamicsParams field.
SIM_KEYS = {
    "sim_mu": "mu",
    "sim_alpha": "alpha",
    "sim_beta": "beta_schedule",
    "sim_tau": "tau",
    "sim_steps": "steps",
    "sim_tokens": "tokens",
    "sim_z0_scale": "z0_scale",
    "sim_v0_scale": "v0_scale",
}

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"expected true or false, got '{text}'")


def _parse_int_list(text: str) -> Tuple[int, ...]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(item) for item in items)


def _parse_beta(text: str) -> Union[float, Tuple[float, ...]]:
    items = [float(item) for item in text.split(",") if item.strip()]
    if not items:
        raise ValueError("expected a number or a comma-separated list")
    return items[0] if len(items) == 1 else tuple(items)


def _line_of(original) -> int:
    # A binding's text starts with any blank lines before it.
    text = original.string
    return original.line + text[: len(text) - len(text.lstrip())].count("\n")


def _parser_for(default: Any) -> Callable[[str], Any]:
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _parse_int_list
    return str


def format_value(value: Any) -> str:
    """Text form of a config value; floats use ``repr`` so they reload exactly."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(item) for item in value)
    return str(value)


@dataclass
class RunConfig:
    """Training and dynamics settings of one run."""

    eer: EERConfig = field(default_factory=EERConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    version: int = CONFIG_VERSION

    def to_flat(self) -> Dict[str, str]:
        flat = {"version": str(self.version)}
        for f in fields(EERConfig):
            flat[f.name] = format_value(getattr(self.eer, f.name))
        for key, name in SIM_KEYS.items():
            flat[key] = format_value(getattr(self.dynamics, name))
        return flat

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, eer=replace(self.eer, seed=seed))


def known_keys() -> Tuple[str, ...]:
    return ("version",) + tuple(f.name for f in fields(EERConfig)) + tuple(SIM_KEYS)


class ConfigFile:
    """Reads and writes a flat ``key = value`` document."""

    def __init__(self, path: Union[str, Path]):
        """Initialize with the document path.

        Args:
            path: Location of the configuration file
        """
        self.path = Path(path)
        self.lines: Dict[str, int] = {}

    def load(self) -> Dict[str, str]:
        """Parse the document.

        Comment and blank lines are skipped. The line of every key is kept in
        ``self.lines``.

        Returns:
            Mapping of key to raw text value, in file order

        Raises:
            ConfigError: On a malformed line, a key without a value, or a duplicate key
        """
        try:
            with open(self.path, "r") as f:
                bindings = list(parse_stream(f))
        except OSError as e:
            raise ConfigError(f"cannot read {self.path}: {e.strerror or e}") from e

        values: Dict[str, str] = {}
        self.lines = {}
        for binding in bindings:
            line = _line_of(binding.original)
            if binding.error:
                raise ConfigError(f"cannot parse '{binding.original.string.strip()}'", line)
            if binding.key is None:
                continue
            if binding.value is None:
                raise ConfigError(f"key '{binding.key}' has no value", line)
            if binding.key in values:
                raise ConfigError(
                    f"duplicate key '{binding.key}' (first set on line {self.lines[binding.key]})",
                    line,
                )
            values[binding.key] = binding.value
            self.lines[binding.key] = line
        return values

    def save(self, values: Mapping[str, str]) -> None:
        """Write ``values`` one ``key = value`` per line.

        Args:
            values: Mapping of key to text value
        """
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as f:
            f.write("# eer run configuration\n")
            for key, value in values.items():
                f.write(f"{key} = {value}\n")

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.load().get(key, default)


def _convert(key: str, text: str, parser: Callable[[str], Any], line: Optional[int]) -> Any:
    try:
        return parser(text)
    except ValueError as e:
        raise ConfigError(f"invalid value for '{key}': {e}", line) from e


def _sim_key_for(message: str) -> Optional[str]:
    word = message.split(" ", 1)[0]
    for key, name in SIM_KEYS.items():
        if name.split("_")[0] == word:
            return key
    return None


def run_config_from_flat(
    values: Mapping[str, str], lines: Optional[Mapping[str, int]] = None
) -> RunConfig:
    """Build and validate a ``RunConfig``; absent keys keep their defaults.

    Raises:
        ConfigError: On an unknown key, a bad value, or a failed invariant
    """
    lines = lines or {}
    allowed = set(known_keys())
    for key in values:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}'", lines.get(key))

    version = CONFIG_VERSION
    if "version" in values:
        version = _convert("version", values["version"], int, lines.get("version"))
        if version != CONFIG_VERSION:
            raise ConfigError(
                f"unsupported config version {version}, expected {CONFIG_VERSION}",
                lines.get("version"),
            )

    defaults = EERConfig()
    eer_values = {}
    for f in fields(EERConfig):
        if f.name in values:
            parser = _parser_for(getattr(defaults, f.name))
            eer_values[f.name] = _convert(f.name, values[f.name], parser, lines.get(f.name))
    eer = EERConfig(**eer_values)
    try:
        eer.validate()
    except ConfigError as e:
        raise ConfigError(str(e), lines.get(e.key), e.key) from e

    base = DynamicsParams()
    sim_values = {}
    for key, name in SIM_KEYS.items():
        if key in values:
            parser = _parse_beta if name == "beta_schedule" else _parser_for(getattr(base, name))
            sim_values[name] = _convert(key, values[key], parser, lines.get(key))
    try:
        dynamics = DynamicsParams(**sim_values)
    except DomainError as e:
        raise ConfigError(str(e), lines.get(_sim_key_for(str(e)))) from e
    return RunConfig(eer, dynamics, version)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a run configuration file.

    Raises:
        ConfigError: With the offending line number where one applies
    """
    config_file = ConfigFile(path)
    values = config_file.load()
    return run_config_from_flat(values, config_file.lines)


def save_run_config(path: Union[str, Path], run_config: RunConfig) -> Path:
    config_file = ConfigFile(path)
    config_file.save(run_config.to_flat())
    return config_file.path
