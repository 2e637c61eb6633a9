"""Flat ``key = value`` config files (``#`` comments, no sections)."""
from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError, DataError


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing config file {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(path), str(exc)) from None
    return dict(parser["config"])


def as_bool(key, text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def as_float(key, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None


def as_int(key, text) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def as_list(key, text, conv=as_float) -> list:
    return [conv(key, part) for part in str(text).split(",") if part.strip()]
