"""Render/parse dataclasses as `key = value` text (one field per line).

Shared by run configuration files and the checkpoint config echo. Supported
field types: int, float, bool, str and Optional[int]. Floats use repr so the
round trip is exact; parse(render(x)) == x.
"""

from __future__ import annotations

import dataclasses
import typing

from .errors import ConfigurationError

__all__ = ["render_kv", "parse_kv_lines", "coerce_value"]


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_kv(obj) -> str:
    lines = [f"{f.name} = {_format_value(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"


def coerce_value(field_type, raw: str):
    raw = raw.strip()
    origin = typing.get_origin(field_type)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(field_type) if a is not type(None)]
        if raw.lower() == "none":
            return None
        field_type = args[0]
    if field_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"expected a boolean, got {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is str:
        return raw
    raise ConfigurationError(f"unsupported config field type {field_type}")


def parse_kv_lines(cls, lines) -> dict:
    """Parse `key = value` lines (with # comments) into kwargs for `cls`."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in names:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        out[key] = coerce_value(hints[key], raw)
    return out
