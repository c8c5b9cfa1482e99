import io
import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from listingforge.crops import (BoundingBox, CropPlan, GeometryError, ImageDecodeError, PerceptualHash,
                                build_crop_plan, cost_summary, dedup, enclosing_square, estimate_cost,
                                expand_box, hamming, merge_overlapping, phash, read_plans, run_crops)
from listingforge.endpoints import ChatResponse, MockEndpoint

B = BoundingBox


def png(arr) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def smooth(seed, size=64):
    rng = np.random.default_rng(seed)
    coarse = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    return np.asarray(Image.fromarray(coarse).resize((size, size), Image.BILINEAR))


def test_expand_examples():
    assert expand_box(B(10, 10, 20, 20), 0.1, 100, 100) == B(9, 9, 21, 21)
    assert expand_box(B(0, 0, 10, 10), 0.1, 100, 100) == B(0, 0, 11, 11)
    assert expand_box(B(3, 4, 17, 9), 0, 100, 100) == B(3, 4, 17, 9)
    with pytest.raises(GeometryError):
        B(5, 5, 5, 9)
    with pytest.raises(GeometryError):
        expand_box(B(0, 0, 1, 1), 1.5, 10, 10)


def test_merge_examples():
    assert merge_overlapping([B(0, 0, 10, 10), B(5, 5, 15, 15)]) == [B(0, 0, 15, 15)]
    assert merge_overlapping([B(0, 0, 10, 10), B(20, 20, 30, 30)]) == [B(0, 0, 10, 10), B(20, 20, 30, 30)]
    assert merge_overlapping([B(0, 0, 10, 10), B(12, 0, 20, 10)], 4) == [B(0, 0, 20, 10)]
    assert merge_overlapping([B(0, 0, 10, 10), B(15, 0, 20, 10)], 4) == [B(0, 0, 10, 10), B(15, 0, 20, 10)]
    assert merge_overlapping([]) == []


def test_merge_cascades_to_fixpoint():
    # the union of the first two reaches the third, which neither touched alone
    boxes = [B(0, 0, 10, 10), B(15, 5, 25, 15), B(9, 0, 20, 2)]
    assert merge_overlapping(boxes) == [B(0, 0, 25, 15)]


def test_square_examples():
    assert enclosing_square([B(0, 0, 10, 10), B(20, 20, 30, 30)], 100, 100) == B(0, 0, 30, 30)
    assert enclosing_square([B(0, 0, 40, 10)], 100, 100) == B(0, 0, 40, 40)
    assert enclosing_square([B(0, 0, 90, 10)], 100, 50) == B(0, 0, 100, 50)
    assert enclosing_square([B(40, 45, 60, 55)], 100, 100) == B(40, 40, 60, 60)
    assert enclosing_square([B(90, 90, 100, 95)], 100, 100) == B(90, 88, 100, 98)
    with pytest.raises(GeometryError):
        enclosing_square([], 10, 10)


def test_phash_basics():
    gray = np.full((40, 30, 3), 77, dtype=np.uint8)
    assert phash(gray).bits == 0
    img = smooth(1)
    assert phash(png(img)) == phash(Image.open(io.BytesIO(png(img))))
    with pytest.raises(ImageDecodeError):
        phash(b"definitely not an image")
    h = phash(img)
    assert PerceptualHash.from_hex(str(h)) == h and len(str(h)) == 16
    assert h.bits & 1 == 0  # padding bit


_h = st.integers(0, 2 ** 64 - 1).map(PerceptualHash)


@given(_h, _h, _h)
def test_hamming_metric(a, b, c):
    assert hamming(a, a) == 0 and 0 <= hamming(a, b) <= 64
    assert hamming(a, b) == hamming(b, a)
    assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


def test_hamming_complement():
    assert hamming(PerceptualHash(0), PerceptualHash(2 ** 64 - 1)) == 64


def test_dedup_rules():
    h = PerceptualHash(0b1011 << 40)
    assert dedup([("a", h), ("b", h), ("c", h)], 10) == [("a", h)]
    far = PerceptualHash(h.bits ^ ((1 << 11) - 1) << 1)
    assert hamming(h, far) == 11
    assert len(dedup([("a", h), ("b", far)], 10)) == 2


@given(st.lists(_h, min_size=1, max_size=12), st.integers(0, 64))
def test_dedup_properties(hashes, threshold):
    entries = [(str(i), h) for i, h in enumerate(hashes)]
    kept = dedup(entries, threshold)
    assert kept[0] == entries[0] and len(kept) <= len(entries)
    assert dedup(kept, threshold) == kept
    order = [int(r) for r, _ in kept]
    assert order == sorted(order)


def test_cost_examples():
    assert estimate_cost(4).total_visual_tokens == 1024
    plans = [CropPlan(f"i{k}", [], {}, b, a, b * 256, a * 256)
             for k, (b, a) in enumerate([(12, 4), (5, 4), (3, 3)])]
    s = cost_summary(plans)
    assert s["images_per_item_before"]["median"] == 5 and s["images_per_item_after"]["median"] == 4
    assert s["token_ratio"] == pytest.approx(20 / 11) and round(s["token_ratio"], 2) == 1.82
    one = cost_summary([CropPlan("x", [], {}, 1, 1, 256, 256)])
    assert one["token_ratio"] == 1.0
    with pytest.raises(ValueError):
        cost_summary([])


def test_plan_twelve_originals_no_detector():
    base = smooth(5)
    arrays = [base] + [np.clip(base * (1 + 0.004 * j), 0, 255) for j in range(1, 9)]
    arrays += [smooth(100 + j) for j in range(3)]
    originals = [(f"original_{k}.png", png(a)) for k, a in enumerate(arrays)]
    plan = build_crop_plan("it", originals).plan
    assert plan.images_before == 12 and plan.images_after <= 5
    assert plan.visual_tokens_before == 3072 and plan.visual_tokens_after <= 1280
    assert plan.kept_refs[0] == "original_0.png"
    assert plan.visual_tokens_after * plan.images_before == plan.visual_tokens_before * plan.images_after


class BoxDetector:
    name = model_name = "boxes"

    def __init__(self, boxes):
        self.boxes = boxes

    def complete(self, req, context=None):
        return ChatResponse(json.dumps({"boxes": self.boxes}))


def test_plan_with_overlapping_boxes():
    originals = [("original_0.png", png(smooth(9)))]
    res = build_crop_plan("one", originals, BoxDetector([[10, 10, 30, 30], [25, 20, 40, 34]]))
    p = res.plan
    assert p.crops_generated == 1 and p.images_after in (1, 2)
    x0, y0, x1, y1 = p.squares["original_0.png"]
    assert x1 - x0 == y1 - y0 and x0 <= 8 and y0 <= 8 and x1 >= 42
    assert set(res.crops) <= {"crop_0.png"}


def test_plan_cap_and_detector_failure():
    originals = [(f"original_{k}.png", png(smooth(200 + k))) for k in range(12)]
    p = build_crop_plan("cap", originals, max_images=9).plan
    assert p.images_after == 9 and p.kept_refs[0] == "original_0.png"
    p = build_crop_plan("bad", originals[:2], BoxDetector("nonsense")).plan
    assert p.crops_generated == 0 and p.squares == {"original_0.png": None, "original_1.png": None}


def test_run_crops_layout(tmp_path):
    images = tmp_path / "imgs"
    images.mkdir()
    for k in range(3):
        (images / f"p{k}.png").write_bytes(png(smooth(300 + k)))
    items = [{"item_id": "it", "image_refs": ["p0.png", "p1.png", "p2.png"]},
             {"item_id": "gone", "image_refs": ["missing.png"]}]
    out = tmp_path / "out"
    plans, failures = run_crops(items, images, out, MockEndpoint("detect"))
    assert len(plans) == 1 and failures[0]["item_id"] == "gone"
    plan = plans[0]
    written = sorted(p.name for p in (out / "it").iterdir())
    assert "plan.json" in written
    assert sorted(plan.kept_refs) == sorted(n for n in written if n != "plan.json")
    assert read_plans(out)[0].to_dict() == plan.to_dict()
    again = tmp_path / "again"
    run_crops(items, images, again, MockEndpoint("detect"))
    assert (again / "plans.jsonl").read_bytes() == (out / "plans.jsonl").read_bytes()


def test_random_merge_invariants():
    rng = random.Random(12)
    for _ in range(200):
        boxes = []
        for _ in range(rng.randint(0, 6)):
            x0, y0 = rng.randrange(60), rng.randrange(60)
            boxes.append(B(x0, y0, x0 + rng.randint(1, 10), y0 + rng.randint(1, 10)))
        merged = merge_overlapping(boxes, 8)
        assert merged == sorted(merged, key=lambda b: (b.y0, b.x0, b.y1, b.x1))
        assert all(any(m.contains(b) for m in merged) for b in boxes)
