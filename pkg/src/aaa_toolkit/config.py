"""Configuration management: runtime settings and the experiment config file."""

import ast
import configparser
import re
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from aaa_toolkit.errors import ConfigurationError, VolumeIOError
from aaa_toolkit.schemas import ExperimentConfig

CONFIG_ECHO_NAME = "config.ini"

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


class Settings(BaseSettings):
    """Runtime settings (environment, not experiment semantics)."""

    log_level: str = "INFO"
    log_format: str = "console"
    # Fixed thread count keeps CPU reductions bit-reproducible.
    torch_threads: int = 1

    model_config = SettingsConfigDict(env_prefix="AAA_", env_file=".env", case_sensitive=False)


settings = Settings()


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line where the key is defined."""
    index: dict[tuple[str, str], int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            continue
        match = _KEY_RE.match(line)
        if match:
            index[(section, match.group(1).strip().lower())] = number
    return index


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    """
    Strictly parse sectioned key-value text into an ExperimentConfig.

    Args:
        text: INI-style text
        source: Name used in error messages

    Returns:
        Validated ExperimentConfig with defaults applied

    Raises:
        ConfigurationError: Unknown section/key, malformed text, or invalid value
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigurationError(f"Malformed config {source}: {e}") from e

    lines = _line_index(text)
    fields = ExperimentConfig.model_fields
    payload: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in fields:
            raise ConfigurationError(f"Unknown config section [{section}] in {source}", key=section)
        section_model = fields[section].annotation
        assert isinstance(section_model, type) and issubclass(section_model, BaseModel)
        known = section_model.model_fields
        values: dict[str, Any] = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(
                    f"Unknown config key '{key}' in section [{section}] of {source}",
                    key=f"{section}.{key}",
                    line=lines.get((section, key)),
                )
            values[key] = _parse_value(raw)
        payload[section] = values

    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [str(part) for part in first["loc"]]
        if not loc:
            raise ConfigurationError(f"Invalid config in {source}: {first['msg']}") from e
        section, key = (loc + ["", ""])[:2]
        line = lines.get((section, key))
        where = f"line {line}" if line is not None else "defaults"
        raise ConfigurationError(
            f"Invalid value for '{section}.{key}' at {where} of {source}: {first['msg']}",
            key=f"{section}.{key}",
            line=line,
        ) from e


def load_config(path: Path | str | None) -> ExperimentConfig:
    """
    Load an experiment config file; None yields the documented defaults.

    Raises:
        VolumeIOError: File missing or unreadable
        ConfigurationError: Parse or validation failure
    """
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"Cannot read config file {path}: {e}") from e
    return parse_config_text(text, source=str(path))


def _to_literal(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, BaseModel):
        return {name: _to_literal(getattr(value, name)) for name in type(value).model_fields}
    if isinstance(value, dict):
        return {_to_literal(k): _to_literal(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return tuple(_to_literal(v) for v in value)
    if isinstance(value, list):
        return [_to_literal(v) for v in value]
    return value


def _format_value(value: Any) -> str:
    literal = _to_literal(value)
    if isinstance(literal, bool):
        return "true" if literal else "false"
    if literal is None:
        return "none"
    return repr(literal)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render every field of cfg (defaults included) as INI text."""
    out: list[str] = ["# effective configuration written by aaa-toolkit"]
    for section in ExperimentConfig.model_fields:
        model = getattr(cfg, section)
        out.append("")
        out.append(f"[{section}]")
        for name in type(model).model_fields:
            out.append(f"{name} = {_format_value(getattr(model, name))}")
    return "\n".join(out) + "\n"


def write_effective_config(cfg: ExperimentConfig, out_dir: Path) -> Path:
    """Echo the effective config into a run directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / CONFIG_ECHO_NAME
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path
