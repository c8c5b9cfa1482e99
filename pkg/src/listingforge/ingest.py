"""Parse, validate and clean raw listing records from JSONL."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .io import dumps, iter_lines, write_jsonl
from .text import clean_text, normalize

logger = logging.getLogger(__name__)

DEFAULT_PLACEHOLDERS = frozenset({"n/a", "na", "none", "does not apply", "unbranded", "-", ""})


class IngestError(ValueError):
    pass


class ListingParseError(IngestError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class ListingSchemaError(IngestError):
    def __init__(self, field_name: str, problem: str = "missing"):
        super().__init__(f"{field_name} {problem}")
        self.field = field_name


@dataclass(frozen=True)
class Listing:
    listing_id: str
    title: str = ""
    category_path: tuple[str, ...] = ()
    aspects: tuple[tuple[str, str], ...] = ()
    image_refs: tuple[str, ...] = ()
    description: Optional[str] = None
    ocr_text: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "listing_id": self.listing_id,
            "title": self.title,
            "category_path": list(self.category_path),
            "aspects": [[n, v] for n, v in self.aspects],
            "image_refs": list(self.image_refs),
        }
        if self.description is not None:
            d["description"] = self.description
        if self.ocr_text is not None:
            d["ocr_text"] = self.ocr_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Listing":
        if not isinstance(d, dict):
            raise ListingSchemaError("record", "is not an object")
        if "listing_id" not in d:
            raise ListingSchemaError("listing_id")
        if "image_refs" not in d:
            raise ListingSchemaError("image_refs")
        lid = d["listing_id"]
        if not isinstance(lid, str):
            raise ListingSchemaError("listing_id", "must be a string")
        refs = d["image_refs"]
        if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
            raise ListingSchemaError("image_refs", "must be a list of strings")
        return cls(
            listing_id=lid,
            title=_opt_str(d, "title") or "",
            category_path=tuple(_str_list(d, "category_path")),
            aspects=tuple(_aspects(d.get("aspects", []))),
            image_refs=tuple(refs),
            description=_opt_str(d, "description"),
            ocr_text=_opt_str(d, "ocr_text"),
        )


def _opt_str(d, key):
    v = d.get(key)
    if v is None:
        return None
    if not isinstance(v, str):
        raise ListingSchemaError(key, "must be a string")
    return v


def _str_list(d, key):
    v = d.get(key, [])
    if v is None:
        return []
    if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
        raise ListingSchemaError(key, "must be a list of strings")
    return v


def _aspects(raw):
    # a JSON object is accepted as an ordered name -> value mapping
    if isinstance(raw, dict):
        raw = list(raw.items())
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ListingSchemaError("aspects", "must be a list of [name, value] pairs")
    out = []
    for pair in raw:
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ListingSchemaError("aspects", "must be a list of [name, value] pairs")
        name, value = pair
        if not isinstance(name, str):
            raise ListingSchemaError("aspects", "names must be strings")
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = str(value)
        if not isinstance(value, str):
            raise ListingSchemaError("aspects", "values must be strings")
        out.append((name, value))
    return out


def parse_listing_line(line: str) -> Listing:
    """Parse one JSONL record verbatim; unknown fields are ignored."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise ListingParseError(e.msg, len(line[: e.pos].encode("utf-8"))) from None
    return Listing.from_dict(doc)


def serialize_listing(listing: Listing) -> str:
    return dumps(listing.to_dict())


def clean_listing(listing: Listing, placeholders=DEFAULT_PLACEHOLDERS) -> Listing:
    """Strip markup and noise from the text fields and drop placeholder/duplicate aspects.

    ``listing_id`` and ``image_refs`` are never touched.
    """
    ph = {normalize(p) for p in placeholders}
    seen = set()
    aspects = []
    for name, value in listing.aspects:
        name, value = clean_text(name), clean_text(value)
        if not name or normalize(value) in ph:
            continue
        key = (normalize(name), normalize(value))
        if key in seen:
            continue
        seen.add(key)
        aspects.append((name, value))

    def opt(s):
        return None if s is None else clean_text(s)

    return Listing(
        listing_id=listing.listing_id,
        title=clean_text(listing.title),
        category_path=tuple(c for c in (clean_text(s) for s in listing.category_path) if c),
        aspects=tuple(aspects),
        image_refs=listing.image_refs,
        description=opt(listing.description),
        ocr_text=opt(listing.ocr_text),
    )


def select_primary_image(listing: Listing) -> str:
    if not listing.image_refs:
        raise ValueError(f"listing {listing.listing_id!r} has no images")
    return listing.image_refs[0]


def rejection_reason(listing: Listing) -> Optional[str]:
    if not listing.listing_id.strip():
        return "listing_id empty"
    if not any(r.strip() for r in listing.image_refs):
        return "image_refs empty"
    return None


@dataclass
class IngestStats:
    records_read: int = 0
    records_kept: int = 0
    records_rejected: int = 0
    aspects_dropped: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class IngestResult:
    listings: list = field(default_factory=list)
    rejects: list = field(default_factory=list)
    stats: IngestStats = field(default_factory=IngestStats)


def ingest_lines(lines: Iterable[tuple[int, str]], placeholders=DEFAULT_PLACEHOLDERS,
                 parallelism: int = 1) -> IngestResult:
    """Parse and clean numbered lines, preserving input order."""
    result = IngestResult()
    parsed = []
    for lineno, line in lines:
        result.stats.records_read += 1
        try:
            parsed.append((lineno, parse_listing_line(line)))
        except IngestError as e:
            result.rejects.append({"line": lineno, "error": str(e)})

    def _clean(item):
        return clean_listing(item[1], placeholders)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        cleaned = list(pool.map(_clean, parsed))

    seen_ids = set()
    for (lineno, raw), listing in zip(parsed, cleaned):
        reason = rejection_reason(listing)
        if reason is None and listing.listing_id in seen_ids:
            reason = "listing_id duplicate"
        if reason is not None:
            result.rejects.append({"line": lineno, "listing_id": raw.listing_id, "error": reason})
            continue
        seen_ids.add(listing.listing_id)
        result.stats.aspects_dropped += len(raw.aspects) - len(listing.aspects)
        result.listings.append(listing)

    result.rejects.sort(key=lambda r: r["line"])
    result.stats.records_kept = len(result.listings)
    result.stats.records_rejected = len(result.rejects)
    return result


def run_ingest(in_path, out_path, reject_log=None, placeholders=DEFAULT_PLACEHOLDERS,
               parallelism: int = 1) -> IngestResult:
    result = ingest_lines(iter_lines(in_path), placeholders, parallelism)
    write_jsonl(out_path, (l.to_dict() for l in result.listings))
    if reject_log is not None:
        write_jsonl(reject_log, result.rejects)
    for r in result.rejects:
        logger.warning("rejected line %d: %s", r["line"], r["error"])
    return result


def read_listings(path) -> list[Listing]:
    return [parse_listing_line(line) for _, line in iter_lines(path)]
