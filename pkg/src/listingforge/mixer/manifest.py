"""Dataset manifests: ``json_path`` + ``sampling_strategy`` entries in YAML.

Strategy grammar::

    all
    first:<int>[%]   end:<int>[%]   random:<int>[%]

With ``%`` the amount is a fraction of the source, otherwise an absolute count.
"""

import json
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import yaml

KINDS = ("all", "first", "end", "random")
_AMOUNT = re.compile(r"^(\d+)(%?)$")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str
    amount: Optional[Union[Fraction, int]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManifestError(f"unknown sampling kind {self.kind!r}")
        if (self.kind == "all") != (self.amount is None):
            raise ManifestError("amount is required for every kind except 'all'")

    @property
    def is_fraction(self) -> bool:
        return isinstance(self.amount, Fraction)

    def __str__(self) -> str:
        if self.kind == "all":
            return "all"
        if self.is_fraction:
            pct = self.amount * 100
            if pct.denominator != 1:
                raise ManifestError(f"fraction {self.amount} is not a whole percentage")
            return f"{self.kind}:{pct.numerator}%"
        return f"{self.kind}:{self.amount}"


def parse_sampling_strategy(text: str) -> SamplingStrategy:
    s = str(text).strip()
    if s == "all":
        return SamplingStrategy("all")
    kind, sep, amount = s.partition(":")
    if kind not in KINDS or kind == "all":
        raise ManifestError(f"unknown sampling kind {kind!r} in {s!r}")
    if not sep:
        raise ManifestError(f"missing ':<amount>' in {s!r}")
    m = _AMOUNT.match(amount.strip())
    if not m:
        raise ManifestError(f"bad amount {amount!r} in {s!r}")
    value = int(m.group(1))
    if m.group(2):
        if not 0 < value <= 100:
            raise ManifestError(f"percentage {value}% outside (0, 100] in {s!r}")
        return SamplingStrategy(kind, Fraction(value, 100))
    if value < 1:
        raise ManifestError(f"count must be >= 1 in {s!r}")
    return SamplingStrategy(kind, value)


def sample_size(n: int, s: SamplingStrategy) -> int:
    if s.kind == "all":
        return n
    if s.is_fraction:
        return (s.amount.numerator * n) // s.amount.denominator
    return min(s.amount, n)


def apply_sampling(n: int, s: SamplingStrategy, seed: int = 0) -> list[int]:
    """Indices of a size-``n`` source selected by ``s``; always ascending."""
    if n < 0:
        raise ValueError("n must be >= 0")
    k = sample_size(n, s)
    if s.kind in ("all", "first"):
        return list(range(k))
    if s.kind == "end":
        return list(range(n - k, n))
    return sorted(random.Random(seed).sample(range(n), k))


@dataclass(frozen=True)
class ManifestEntry:
    json_path: str
    sampling_strategy: SamplingStrategy

    def to_dict(self) -> dict:
        return {"json_path": self.json_path, "sampling_strategy": str(self.sampling_strategy)}


def _entries_of(doc):
    if doc is None:
        return []
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        # named groups, e.g. {"datasets": [...]} or several headed listings
        out = []
        for key, value in doc.items():
            if not isinstance(value, list):
                raise ManifestError(f"group {key!r} is not a sequence of entries")
            out.extend(value)
        return out
    raise ManifestError("manifest must be a sequence of entries")


def parse_manifest(document: str) -> list[ManifestEntry]:
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as e:
        raise ManifestError(f"invalid YAML: {e}") from None
    entries = []
    for i, raw in enumerate(_entries_of(doc)):
        if not isinstance(raw, dict):
            raise ManifestError(f"entry {i}: not a mapping")
        for key in ("json_path", "sampling_strategy"):
            if key not in raw or raw[key] is None:
                raise ManifestError(f"entry {i}: {key} missing")
        path = raw["json_path"]
        if not isinstance(path, str) or not path.strip():
            raise ManifestError(f"entry {i}: json_path must be a non-empty string")
        try:
            strategy = parse_sampling_strategy(raw["sampling_strategy"])
        except ManifestError as e:
            raise ManifestError(f"entry {i}: {e}") from None
        entries.append(ManifestEntry(path, strategy))
    return entries


def serialize_manifest(entries) -> str:
    return yaml.safe_dump([e.to_dict() for e in entries], sort_keys=False, allow_unicode=True)


def load_manifest(path) -> list[ManifestEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def load_source(path) -> list:
    """A source dataset: a JSON array or JSONL of samples."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        data = json.loads(text)
    else:
        data = [json.loads(line) for line in text.splitlines() if line.strip()]
    return data


def sample_manifest_sources(entries, base_dir, seed: int = 0):
    """Apply each entry's strategy to its source. Returns (samples, per-source counts)."""
    base = Path(base_dir)
    samples, counts = [], []
    for i, entry in enumerate(entries):
        path = Path(entry.json_path)
        if not path.is_absolute():
            path = base / path
        try:
            data = load_source(path)
        except (OSError, json.JSONDecodeError) as e:
            raise ManifestError(f"entry {i}: cannot load {entry.json_path}: {e}") from None
        idx = apply_sampling(len(data), entry.sampling_strategy, seed)
        samples.extend(data[j] for j in idx)
        counts.append({
            "json_path": entry.json_path,
            "sampling_strategy": str(entry.sampling_strategy),
            "available": len(data),
            "selected": len(idx),
        })
    return samples, counts
