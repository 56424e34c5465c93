"""Flat ``key = value`` configuration files.

Grammar, one entry per line::

    # comment              (also allowed after a value)
    key = value            keys are [a-z_][a-z0-9_]*, whitespace around '=' is ignored
    key = a, b, c          comma-separated lists
    key = 0..9             inclusive integer range

Values are parsed as bool (true/false/yes/no), int, float, or left as text.
A repeated key is an error.
"""
from __future__ import annotations

import re

_KEY = re.compile(r"^[a-z_][a-z0-9_]*$")
_RANGE = re.compile(r"^(-?\d+)\.\.(-?\d+)$")


class ConfigError(ValueError):
    pass


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    text = text.strip()
    m = _RANGE.match(text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        return list(range(a, b + 1)) if a <= b else list(range(a, b - 1, -1))
    if "," in text:
        return [_scalar(t.strip()) for t in text.split(",") if t.strip()]
    return _scalar(text)


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"line {n}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config(path: str) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def as_list(v) -> list:
    return v if isinstance(v, list) else [v]


def merge(file_values: dict, overrides: dict) -> dict:
    """File values overridden by every non-None command-line value."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged
