"""TOML configuration: packaged defaults merged with user files."""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

__all__ = ["load_toml", "defaults", "packaged_config", "merge"]


def load_toml(path) -> dict:
    with open(Path(path), "rb") as fh:
        return _toml.load(fh)


def _load_resource(name: str) -> dict:
    ref = resources.files("hyperspod").joinpath(name)
    with ref.open("rb") as fh:
        return _toml.load(fh)


def defaults() -> dict:
    """Built-in defaults (window sizes, matching and evaluation parameters)."""
    return _load_resource("defaults.toml")


def packaged_config(name: str) -> Path:
    """Filesystem path of a recipe shipped under ``hyperspod/configs``."""
    ref = resources.files("hyperspod").joinpath("configs", f"{name}.toml")
    if not ref.is_file():
        raise FileNotFoundError(f"no packaged config named {name!r}")
    return Path(str(ref))


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins on leaves."""
    out = dict(base)
    for k, v in override.items():
        out[k] = merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out
