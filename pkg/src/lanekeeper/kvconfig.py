"""Flat ``key = value`` text files used for every config in the package.

Blank lines and ``#`` comments are ignored. ``key: value`` is accepted too.
"""

from __future__ import annotations

import os
from typing import Dict, Iterable

from lanekeeper.errors import ConfigError


def parse_kv(text: str, origin: str = "<string>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        elif ":" in line:
            key, _, value = line.partition(":")
        else:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_kv(path: str | os.PathLike) -> Dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text, origin=str(path))


def dump_kv(values: Dict[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def check_keys(values: Dict[str, str], allowed: Iterable[str], origin: str = "config") -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"{origin}: unknown key(s): {', '.join(unknown)}")


def as_int(values: Dict[str, str], key: str) -> int:
    try:
        return int(values[key])
    except KeyError:
        raise ConfigError(f"missing key {key!r}") from None
    except ValueError:
        raise ConfigError(f"{key!r} must be an integer, got {values[key]!r}") from None


def as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key!r} must be a number, got {value!r}") from None


def as_int_list(value: str, key: str) -> list:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key!r} must be comma-separated integers, got {value!r}") from None
