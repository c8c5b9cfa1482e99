"""Integer-pixel box geometry: expansion, gap-tolerant merging, enclosing squares.

Boxes are half-open pixel rectangles ``(x0, y0, x1, y1)`` with the origin at the
top-left corner; an image of size ``w x h`` is the box ``(0, 0, w, h)``.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def within(self, w: int, h: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= w and self.y1 <= h


def union(boxes: Iterable[BoundingBox]) -> BoundingBox:
    boxes = list(boxes)
    if not boxes:
        raise GeometryError("union of no boxes")
    return BoundingBox(
        min(b.x0 for b in boxes), min(b.y0 for b in boxes),
        max(b.x1 for b in boxes), max(b.y1 for b in boxes),
    )


def _snap(v: float) -> float:
    # absorb float noise such as 0.1 * 30 == 3.0000000000000004
    return round(v, 9)


def expand_box(b: BoundingBox, margin_frac: float, image_w: int, image_h: int) -> BoundingBox:
    """Push every side outward by ``margin_frac`` of the box extent, clamped to the image.

    Fractional results are rounded outward to whole pixels.
    """
    if not 0 <= margin_frac <= 1:
        raise GeometryError(f"margin_frac {margin_frac} outside [0, 1]")
    if b.width <= 0 or b.height <= 0:
        raise GeometryError(f"degenerate box {b.as_tuple()}")
    dx, dy = margin_frac * b.width, margin_frac * b.height
    return BoundingBox(
        max(0, math.floor(_snap(b.x0 - dx))),
        max(0, math.floor(_snap(b.y0 - dy))),
        min(image_w, math.ceil(_snap(b.x1 + dx))),
        min(image_h, math.ceil(_snap(b.y1 + dy))),
    )


def mergeable(a: BoundingBox, b: BoundingBox, gap_px: float) -> bool:
    """Boxes intersect (touching included) once each is inflated by gap_px/2."""
    return (a.x0 <= b.x1 + gap_px and b.x0 <= a.x1 + gap_px
            and a.y0 <= b.y1 + gap_px and b.y0 <= a.y1 + gap_px)


def _components(boxes: Sequence[BoundingBox], gap_px: float) -> list[list[int]]:
    parent = list(range(len(boxes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if mergeable(boxes[i], boxes[j], gap_px):
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(len(boxes)):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def merge_overlapping(boxes: Iterable[BoundingBox], gap_px: float = 0) -> list[BoundingBox]:
    """Replace each connected group of mergeable boxes by its union.

    Unions can become mergeable with each other, so this repeats until the
    result is pairwise non-mergeable. Output is sorted by (y0, x0).
    """
    current = list(boxes)
    while True:
        groups = _components(current, gap_px)
        merged = [union(current[i] for i in g) for g in groups]
        if len(merged) == len(current):
            break
        current = merged
    return sorted(current, key=lambda b: (b.y0, b.x0, b.y1, b.x1))


def _place(lo: int, extent: int, side: int, limit: int) -> int:
    start = lo - (side - extent) // 2
    return min(max(start, 0), limit - side)


def enclosing_square(boxes: Iterable[BoundingBox], image_w: int, image_h: int) -> BoundingBox:
    """Smallest square containing every box, kept inside the image.

    The square is centred on the union and shifted the minimal distance needed to
    stay inside the image. When the union's longer side exceeds the shorter image
    side no square fits, and the whole image is returned instead.
    """
    boxes = list(boxes)
    if not boxes:
        raise GeometryError("enclosing_square needs at least one box")
    u = union(boxes)
    side = max(u.width, u.height)
    if side > min(image_w, image_h):
        return BoundingBox(0, 0, image_w, image_h)
    x0 = _place(u.x0, u.width, side, image_w)
    y0 = _place(u.y0, u.height, side, image_h)
    return BoundingBox(x0, y0, x0 + side, y0 + side)


def clamp_box(x0: float, y0: float, x1: float, y1: float, image_w: int, image_h: int):
    """Round a raw detector box outward and clamp it; None when nothing is left."""
    bx0 = max(0, math.floor(x0))
    by0 = max(0, math.floor(y0))
    bx1 = min(image_w, math.ceil(x1))
    by1 = min(image_h, math.ceil(y1))
    if bx0 >= bx1 or by0 >= by1:
        return None
    return BoundingBox(bx0, by0, bx1, by1)
