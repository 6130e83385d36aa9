"""Flat ``key = value`` text files used for configs and run manifests."""

from __future__ import annotations

from .errors import ConfigError


def parse_kv(text: str) -> dict[str, str]:
    """Parse one ``key = value`` pair per line.

    Blank lines and ``#`` comments are ignored.  Duplicate keys and lines
    without ``=`` are rejected.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def format_kv(pairs: dict[str, object]) -> str:
    """Render pairs as ``key = value`` lines, preserving insertion order."""
    return "".join(f"{key} = {value}\n" for key, value in pairs.items())
