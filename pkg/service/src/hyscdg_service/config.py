"""Service configuration: service.toml overridden by HYSCDG_SVC_* env vars."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    mode: str = "procedural"  # procedural | model-adapter
    max_concurrent: int = 4
    request_size_limit: int = 64 * 1024 * 1024  # bytes of encoded payload
    adapter: Optional[str] = None  # "module:callable" for model-adapter mode

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.mode not in ("procedural", "model-adapter"):
            raise ValueError(f"unknown mode {self.mode!r}")


def load_config(path: Optional[Path] = None) -> ServiceConfig:
    values: dict = {}
    candidate = Path(path) if path else Path("service.toml")
    if candidate.exists():
        with open(candidate, "rb") as fh:
            values.update(tomllib.load(fh))
    if "HYSCDG_SVC_PORT" in os.environ:
        values["port"] = int(os.environ["HYSCDG_SVC_PORT"])
    if "HYSCDG_SVC_MODE" in os.environ:
        values["mode"] = os.environ["HYSCDG_SVC_MODE"]
    if "HYSCDG_SVC_MAX_CONCURRENT" in os.environ:
        values["max_concurrent"] = int(os.environ["HYSCDG_SVC_MAX_CONCURRENT"])
    known = {f for f in ServiceConfig.__dataclass_fields__}
    return ServiceConfig(**{k: v for k, v in values.items() if k in known})
