"""Visual verification: caption the primary image, keep only aspects the caption supports."""

import logging
import mimetypes
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .endpoints import ChatRequest, Endpoint, EndpointError, ProtocolError
from .ingest import IngestError, Listing, parse_listing_line, select_primary_image
from .io import iter_lines, write_jsonl
from .templates import load_templates
from .text import normalize

logger = logging.getLogger(__name__)

MODES = ("llm", "lexical")


class CurationError(Exception):
    pass


class ImageReadError(CurationError):
    pass


@dataclass(frozen=True)
class Caption:
    listing_id: str
    text: str
    producer: str

    def __post_init__(self):
        if not self.text.strip():
            raise CurationError(f"empty caption for {self.listing_id}")


@dataclass(frozen=True)
class VerifiedListing:
    listing: Listing
    caption: Caption
    verified_aspects: tuple[tuple[str, str], ...]

    @property
    def listing_id(self) -> str:
        return self.listing.listing_id

    @property
    def flag_empty(self) -> bool:
        return not self.verified_aspects

    def to_record(self) -> dict:
        return {
            "listing_id": self.listing.listing_id,
            "caption": {"text": self.caption.text, "producer": self.caption.producer},
            "verified_aspects": [[n, v] for n, v in self.verified_aspects],
            "flag_empty": self.flag_empty,
            "listing": self.listing.to_dict(),
        }

    @classmethod
    def from_record(cls, d: dict) -> "VerifiedListing":
        listing = Listing.from_dict(d["listing"])
        cap = d["caption"]
        return cls(
            listing=listing,
            caption=Caption(listing.listing_id, cap["text"], cap.get("producer", "")),
            verified_aspects=tuple((n, v) for n, v in d["verified_aspects"]),
        )


@dataclass
class CurationStats:
    listings_in: int = 0
    listings_out: int = 0
    aspects_in: int = 0
    aspects_verified: int = 0
    verification_rate: float = 0.0
    flagged_empty: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


def media_type(ref: str) -> str:
    return mimetypes.guess_type(ref)[0] or "application/octet-stream"


def file_image_loader(images_dir=None) -> Callable[[str], bytes]:
    base = Path(images_dir) if images_dir else None

    def load(ref: str) -> bytes:
        if re.match(r"^[a-z][a-z0-9+.-]*://", ref, re.I):
            raise ImageReadError(f"remote image refs are not fetched: {ref}")
        path = Path(ref)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            data = path.read_bytes()
        except OSError as e:
            raise ImageReadError(f"cannot read image {ref}: {e}") from None
        if not data:
            raise ImageReadError(f"image {ref} is empty")
        return data

    return load


def caption_listing(listing: Listing, captioner: Endpoint, load_image: Callable[[str], bytes],
                    templates: Optional[dict] = None) -> Caption:
    templates = templates or load_templates()
    ref = select_primary_image(listing)
    data = load_image(ref)
    if not data:
        raise ImageReadError(f"image {ref} is empty")
    req = ChatRequest(user_text=templates["caption"], image_payloads=((media_type(ref), data),))
    resp = captioner.complete(req, {"aspects": list(listing.aspects)})
    return Caption(listing.listing_id, resp.text.strip(), getattr(captioner, "model_name", captioner.name))


def parse_verifier_reply(reply: str) -> list[str]:
    """Parse ``"Color, Material."`` into names; ``NONE`` means no aspect."""
    text = reply.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    if not text or "\n" in text:
        raise ProtocolError("verifier reply is not a single comma-separated line", raw=reply)
    if text.upper() == "NONE":
        return []
    names = [p.strip() for p in text.split(",")]
    if any(not n for n in names):
        raise ProtocolError("verifier reply has an empty list element", raw=reply)
    return names


def verify_lexical(aspects, caption_text: str) -> tuple:
    cap = normalize(caption_text)
    return tuple((n, v) for n, v in aspects if normalize(v) and normalize(v) in cap)


def verify_aspects(listing: Listing, caption: Caption, mode: str = "llm",
                   verifier: Optional[Endpoint] = None, templates: Optional[dict] = None) -> VerifiedListing:
    if caption.listing_id != listing.listing_id:
        raise CurationError(f"caption belongs to {caption.listing_id}, not {listing.listing_id}")
    if mode == "lexical":
        kept = verify_lexical(listing.aspects, caption.text)
    elif mode == "llm":
        if verifier is None:
            raise CurationError("llm mode needs a verifier endpoint")
        templates = templates or load_templates()
        if not listing.aspects:
            kept = ()
        else:
            aspect_list = "\n".join(f"- {n}: {v}" for n, v in listing.aspects)
            req = ChatRequest(
                system_text=templates["verify_system"],
                user_text=templates["verify_user"].format(caption=caption.text, aspect_list=aspect_list),
            )
            resp = verifier.complete(req, {"caption": caption.text, "aspects": list(listing.aspects)})
            names = {normalize(n) for n in parse_verifier_reply(resp.text)}
            kept = tuple((n, v) for n, v in listing.aspects if normalize(n) in names)
    else:
        raise CurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    return VerifiedListing(listing, caption, kept)


def curate_listing(listing, mode, captioner, verifier, load_image, templates=None) -> VerifiedListing:
    caption = caption_listing(listing, captioner, load_image, templates)
    return verify_aspects(listing, caption, mode, verifier, templates)


def curate_listings(listings, mode, captioner, verifier, load_image, templates=None,
                    parallelism: int = 1):
    """Curate in parallel; returns (results in input order, stats). Failed records are None."""
    templates = templates or load_templates()

    def work(listing):
        try:
            return curate_listing(listing, mode, captioner, verifier, load_image, templates)
        except (CurationError, EndpointError) as e:
            logger.warning("listing %s skipped: %s", listing.listing_id, e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(work, listings))

    stats = CurationStats(listings_in=len(listings))
    for r in results:
        if r is None:
            stats.failures += 1
            continue
        stats.listings_out += 1
        stats.aspects_in += len(r.listing.aspects)
        stats.aspects_verified += len(r.verified_aspects)
        stats.flagged_empty += r.flag_empty
    if stats.aspects_in:
        stats.verification_rate = stats.aspects_verified / stats.aspects_in
    return results, stats


def run_curation(in_path, out_path, mode, captioner, verifier, images_dir=None, templates=None,
                 parallelism: int = 1) -> CurationStats:
    listings = []
    bad_lines = 0
    for lineno, line in iter_lines(in_path):
        try:
            listings.append(parse_listing_line(line))
        except IngestError as e:
            logger.warning("line %d skipped: %s", lineno, e)
            bad_lines += 1
    results, stats = curate_listings(listings, mode, captioner, verifier,
                                     file_image_loader(images_dir), templates, parallelism)
    stats.listings_in += bad_lines
    stats.failures += bad_lines
    write_jsonl(out_path, (r.to_record() for r in results if r is not None))
    return stats
