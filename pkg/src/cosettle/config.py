"""``key = value`` config files and typed overrides for dataclass configs."""

import dataclasses

from .errors import ParameterError


def parse_kv_text(text):
    """Parse ``key = value`` lines into a dict; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParameterError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def read_kv_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def coerce(name, kind, value):
    """Convert a string to the dataclass field type ``kind`` (bool, int, float or str)."""
    if not isinstance(value, str):
        return value
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ParameterError(f"config key {name!r}: cannot parse {value!r} as {kind}") from None
    return value


def apply_overrides(obj, overrides, aliases=None):
    """Copy of dataclass ``obj`` with ``overrides`` applied; unknown keys raise ``ParameterError``."""
    aliases = aliases or {}
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in overrides.items():
        norm = key.replace("-", "_")
        name = aliases.get(norm, norm)
        if name not in types:
            raise ParameterError(f"unknown config key {key!r}")
        updates[name] = coerce(name, types[name], value)
    return dataclasses.replace(obj, **updates)
