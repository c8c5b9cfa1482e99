"""Per-item crop planning: detect, consolidate boxes, crop, hash, deduplicate, cost."""

import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image

from ..curate import media_type
from ..endpoints import ChatRequest, EndpointError
from ..io import atomic_write_bytes, write_json, write_jsonl
from ..templates import load_templates
from .cost import TOKENS_PER_IMAGE
from .geometry import GeometryError, clamp_box, enclosing_square, expand_box, merge_overlapping
from .phash import ImageDecodeError, dedup, phash

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.10
DEFAULT_GAP = 8
DEFAULT_THRESHOLD = 10
DEFAULT_MAX_IMAGES = 9


@dataclass
class CropPlan:
    item_id: str
    kept_refs: list
    squares: dict  # original ref -> [x0, y0, x1, y1] or None
    images_before: int
    images_after: int
    visual_tokens_before: int
    visual_tokens_after: int
    crops_generated: int = 0
    tokens_per_image: int = TOKENS_PER_IMAGE
    hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "kept_refs": list(self.kept_refs),
            "squares": dict(self.squares),
            "images_before": self.images_before,
            "images_after": self.images_after,
            "visual_tokens_before": self.visual_tokens_before,
            "visual_tokens_after": self.visual_tokens_after,
            "crops_generated": self.crops_generated,
            "tokens_per_image": self.tokens_per_image,
            "hashes": dict(self.hashes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CropPlan":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class CropResult:
    plan: CropPlan
    crops: dict  # crop ref -> PNG bytes


def parse_detector_reply(text: str, image_w: int, image_h: int):
    doc = json.loads(text)
    boxes = []
    for raw in doc["boxes"]:
        x0, y0, x1, y1 = (float(v) for v in raw)
        b = clamp_box(x0, y0, x1, y1, image_w, image_h)
        if b is not None:
            boxes.append(b)
    return boxes


def detect_boxes(detector, ref: str, data: bytes, size, templates) -> list:
    w, h = size
    req = ChatRequest(user_text=templates["detect"], image_payloads=((media_type(ref), data),))
    resp = detector.complete(req, {"width": w, "height": h})
    return parse_detector_reply(resp.text, w, h)


def square_for_image(boxes, w: int, h: int, margin_frac: float, gap_px: float):
    if not boxes:
        return None
    expanded = [expand_box(b, margin_frac, w, h) for b in boxes]
    return enclosing_square(merge_overlapping(expanded, gap_px), w, h)


def _png(img: Image.Image) -> bytes:
    if img.mode not in ("L", "RGB", "RGBA"):
        img = img.convert("RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def crop_ref(k: int) -> str:
    return f"crop_{k}.png"


def build_crop_plan(item_id: str, originals, detector=None, margin_frac: float = DEFAULT_MARGIN,
                    gap_px: float = DEFAULT_GAP, threshold: int = DEFAULT_THRESHOLD,
                    max_images: Optional[int] = DEFAULT_MAX_IMAGES,
                    tokens_per_image: int = TOKENS_PER_IMAGE, templates: Optional[dict] = None,
                    parallelism: int = 1) -> CropResult:
    """Consolidate an item's images into a token-budgeted set.

    ``originals`` is an ordered list of ``(ref, encoded bytes)``; the first is the
    primary image. Each original may contribute one square crop covering all its
    (expanded, merged) detector boxes. Originals come first, then crops in source
    order; the pooled list is deduplicated by pHash and truncated to ``max_images``.
    """
    if not originals:
        raise ValueError(f"item {item_id}: no images")
    templates = templates or load_templates()

    decoded = []
    for ref, data in originals:
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except OSError as e:
            raise ImageDecodeError(f"item {item_id}: cannot decode {ref}: {e}") from None
        decoded.append(img)

    def process(k):
        ref, data = originals[k]
        img = decoded[k]
        if detector is None:
            return None
        try:
            boxes = detect_boxes(detector, ref, data, img.size, templates)
            square = square_for_image(boxes, img.width, img.height, margin_frac, gap_px)
        except (EndpointError, GeometryError, ValueError, KeyError, TypeError) as e:
            logger.warning("item %s: detection failed for %s: %s", item_id, ref, e)
            return None
        if square is None:
            return None
        return square, img.crop(square.as_tuple())

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        detections = list(pool.map(process, range(len(originals))))

    squares = {}
    crops = {}
    pool_entries = [(ref, img) for (ref, _), img in zip(originals, decoded)]
    for k, ((ref, _), det) in enumerate(zip(originals, detections)):
        if det is None:
            squares[ref] = None
            continue
        square, crop_img = det
        squares[ref] = list(square.as_tuple())
        name = crop_ref(k)
        crops[name] = _png(crop_img)
        pool_entries.append((name, crop_img))

    hashed = [(ref, phash(img)) for ref, img in pool_entries]
    kept = dedup(hashed, threshold)
    if max_images is not None:
        kept = kept[:max(1, max_images)]
    kept_refs = [ref for ref, _ in kept]

    n_before = len(originals)
    plan = CropPlan(
        item_id=item_id,
        kept_refs=kept_refs,
        squares=squares,
        images_before=n_before,
        images_after=len(kept_refs),
        visual_tokens_before=n_before * tokens_per_image,
        visual_tokens_after=len(kept_refs) * tokens_per_image,
        crops_generated=len(crops),
        tokens_per_image=tokens_per_image,
        hashes={ref: str(h) for ref, h in hashed},
    )
    return CropResult(plan, {k: v for k, v in crops.items() if k in kept_refs})


def original_ref(k: int, source_ref: str) -> str:
    ext = os.path.splitext(source_ref)[1].lower() or ".img"
    return f"original_{k}{ext}"


def run_crops(items, images_dir, out_dir, detector=None, margin_frac=DEFAULT_MARGIN,
              gap_px=DEFAULT_GAP, threshold=DEFAULT_THRESHOLD, max_images=DEFAULT_MAX_IMAGES,
              tokens_per_image=TOKENS_PER_IMAGE, templates=None, parallelism=1):
    """Write ``<out>/<item_id>/{original_k.ext, crop_k.png, plan.json}`` plus ``<out>/plans.jsonl``.

    Only images kept by the plan are written.

    ``items`` are dicts with ``item_id`` (or ``listing_id``) and ``image_refs``.
    Returns (plans, failures).
    """
    out_dir = Path(out_dir)
    images_dir = Path(images_dir) if images_dir else None
    plans, failures = [], []
    for item in items:
        item_id = item.get("item_id") or item.get("listing_id")
        try:
            if not item_id:
                raise ValueError("item without item_id")
            originals = []
            for k, ref in enumerate(item.get("image_refs") or []):
                path = Path(ref)
                if images_dir is not None and not path.is_absolute():
                    path = images_dir / path
                originals.append((original_ref(k, ref), path.read_bytes()))
            result = build_crop_plan(item_id, originals, detector, margin_frac, gap_px, threshold,
                                     max_images, tokens_per_image, templates, parallelism)
        except (OSError, ValueError) as e:
            logger.warning("item %s skipped: %s", item_id, e)
            failures.append({"item_id": item_id, "error": str(e)})
            continue
        item_dir = out_dir / item_id
        kept = set(result.plan.kept_refs)
        for name, data in originals:
            if name in kept:
                atomic_write_bytes(item_dir / name, data)
        for name, data in result.crops.items():
            atomic_write_bytes(item_dir / name, data)
        write_json(item_dir / "plan.json", result.plan.to_dict())
        plans.append(result.plan)
    write_jsonl(out_dir / "plans.jsonl", (p.to_dict() for p in plans))
    return plans, failures


def read_plans(path) -> list[CropPlan]:
    path = Path(path)
    if path.is_dir():
        path = path / "plans.jsonl"
    with open(path, encoding="utf-8") as f:
        return [CropPlan.from_dict(json.loads(line)) for line in f if line.strip()]

