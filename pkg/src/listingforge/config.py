"""Layered run configuration: YAML file < LISTINGFORGE_* environment < command-line flags."""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .ingest import DEFAULT_PLACEHOLDERS

ENV_PREFIX = "LISTINGFORGE_"
ROLES = ("captioner", "verifier", "detector", "annotator", "judge")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    endpoints: dict = field(default_factory=dict)  # role -> "mock" | mapping | YAML path
    margin_frac: float = 0.10
    gap_px: int = 8
    phash_threshold: int = 10
    max_images: Optional[int] = 9
    tokens_per_image: int = 256
    mix_spec: Optional[str] = None
    template_dir: Optional[str] = None
    seed: int = 0
    parallelism: int = 4
    failure_threshold: float = 0.01
    placeholders: list = field(default_factory=lambda: sorted(DEFAULT_PLACEHOLDERS))

    def validate(self) -> "Config":
        if not 0 <= self.margin_frac <= 1:
            raise ConfigError("margin_frac must be in [0, 1]")
        if self.gap_px < 0:
            raise ConfigError("gap_px must be >= 0")
        if not 0 <= self.phash_threshold <= 64:
            raise ConfigError("phash_threshold must be in [0, 64]")
        if self.max_images is not None and self.max_images < 1:
            raise ConfigError("max_images must be >= 1")
        if self.tokens_per_image < 1:
            raise ConfigError("tokens_per_image must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0 <= self.failure_threshold <= 1:
            raise ConfigError("failure_threshold must be in [0, 1]")
        unknown = set(self.endpoints) - set(ROLES)
        if unknown:
            raise ConfigError(f"unknown endpoint roles {sorted(unknown)}")
        return self

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SCALARS = {f.name: f for f in fields(Config) if f.name not in ("endpoints", "placeholders")}


def _coerce(name: str, raw: str):
    if name in ("margin_frac", "failure_threshold"):
        return float(raw)
    if name in ("gap_px", "phash_threshold", "tokens_per_image", "seed", "parallelism"):
        return int(raw)
    if name == "max_images":
        return None if raw.lower() in ("", "none") else int(raw)
    return raw or None


def load_config(path=None, env=None, overrides: Optional[dict] = None) -> Config:
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        unknown = set(data) - {f.name for f in fields(Config)}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for name in _SCALARS:
        key = ENV_PREFIX + name.upper()
        if key in env:
            try:
                data[name] = _coerce(name, env[key])
            except ValueError:
                raise ConfigError(f"{key}={env[key]!r} is not valid") from None
    endpoints = dict(data.pop("endpoints", None) or {})
    for role in ROLES:
        key = f"{ENV_PREFIX}{role.upper()}"
        if key in env:
            endpoints[role] = env[key]
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k in ROLES:
            endpoints[k] = v
        else:
            data[k] = v
    try:
        cfg = Config(endpoints=endpoints, **data)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()
