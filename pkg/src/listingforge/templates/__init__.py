import hashlib
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

TEMPLATE_FILE = "prompts.yaml"


@lru_cache(maxsize=1)
def _defaults() -> tuple:
    text = resources.files(__name__).joinpath(TEMPLATE_FILE).read_text(encoding="utf-8")
    return tuple(yaml.safe_load(text).items())


def load_templates(template_dir: Optional[str] = None) -> dict[str, str]:
    """Bundled templates, overlaid by ``<template_dir>/prompts.yaml`` when given."""
    templates = dict(_defaults())
    if template_dir:
        path = Path(template_dir) / TEMPLATE_FILE
        override = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        unknown = set(override) - set(templates)
        if unknown:
            raise ValueError(f"{path}: unknown template keys {sorted(unknown)}")
        templates.update(override)
    return templates


def fingerprint(templates: dict[str, str]) -> str:
    h = hashlib.sha256()
    for key in sorted(templates):
        h.update(key.encode())
        h.update(b"\0")
        h.update(templates[key].encode())
        h.update(b"\0")
    return h.hexdigest()[:16]
