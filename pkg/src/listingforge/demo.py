"""Deterministic synthetic corpus and an end-to-end run over every stage with mock endpoints."""

import io
import json
import logging
import random
from pathlib import Path

import numpy as np
from PIL import Image

from .endpoints import ChatRequest, MockEndpoint
from .io import atomic_write_bytes, atomic_write_text, dumps, tree_digests, write_json, write_jsonl

logger = logging.getLogger(__name__)

COLORS = ("Red", "Blue", "Black", "White", "Green", "Beige", "Navy", "Pink")
PATTERNS = ("Solid", "Striped", "Floral", "Plaid")
BRANDS = ("Acme", "Northwind", "Contoso", "Globex", "Initech", "Umbrella")
COUNTRIES = ("Portugal", "Vietnam", "Italy", "Mexico", "India")

CATALOG = [
    (("Clothing", "Women", "Tops"), "Blouse",
     {"Material": ("Cotton", "Silk", "Polyester", "Linen"), "Style": ("Casual", "Formal", "Boho")}),
    (("Clothing", "Men", "Shirts"), "Shirt",
     {"Material": ("Cotton", "Linen", "Flannel"), "Sleeve Length": ("Short Sleeve", "Long Sleeve")}),
    (("Home", "Bedding", "Pillows"), "Pillow",
     {"Material": ("Velvet", "Cotton", "Linen"), "Shape": ("Square", "Round", "Rectangle")}),
    (("Bags", "Handbags"), "Handbag",
     {"Material": ("Leather", "Canvas", "Nylon"), "Style": ("Tote", "Crossbody", "Clutch")}),
    (("Electronics", "Headphones"), "Headphones",
     {"Connectivity": ("Wireless", "Wired"), "Form Factor": ("Over-Ear", "In-Ear", "On-Ear")}),
]

N_CROP_ITEMS = 20
IMAGES_PER_CROP_ITEM = 12
RUN_MANIFEST = "run_manifest.json"


def _png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _smooth_field(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Low-frequency random RGB image; distinct seeds give pHash-distinct images."""
    coarse = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
    return np.asarray(Image.fromarray(coarse).resize((size, size), Image.BILINEAR))


def _brighter(arr: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(np.rint(arr.astype(np.float64) * factor), 0, 255).astype(np.uint8)


def _noisy(rng: random.Random, text: str) -> str:
    r = rng.random()
    if r < 0.15:
        return f"<b>{text}</b>"
    if r < 0.25:
        return f"  {text}  "
    return text


def _synth_listing(i: int, rng: random.Random) -> tuple[dict, dict]:
    """One raw listing plus the hidden ground truth used for eval gold."""
    category, noun, extra = CATALOG[i % len(CATALOG)]
    color, pattern, brand = rng.choice(COLORS), rng.choice(PATTERNS), rng.choice(BRANDS)
    truth = {"Color": color, "Pattern": pattern}
    for name, values in extra.items():
        truth[name] = rng.choice(values)
    aspects = [["Brand", brand if rng.random() < 0.85 else "Unbranded"]]
    aspects += [[n, _noisy(rng, v)] for n, v in truth.items()]
    if rng.random() < 0.3:
        aspects.append(["color", color.upper()])  # duplicate differing only in case
    aspects.append(["MPN", "Does Not Apply" if rng.random() < 0.6 else f"{brand[:3].upper()}-{i:05d}"])
    if rng.random() < 0.2:
        aspects.append(["Model", "N/A"])
    title = f"{brand} {color} {pattern} {noun}"
    if rng.random() < 0.2:
        title = f"{brand} &amp; Co. <i>{color}</i> {noun}"
    country = rng.choice(COUNTRIES)
    listing = {
        "listing_id": f"L{i:05d}",
        "title": _noisy(rng, title),
        "category_path": list(category),
        "aspects": aspects,
        "image_refs": [f"listing_{i:05d}.png"],
        "description": f"Gently used {noun.lower()} by {brand}." if rng.random() < 0.5 else None,
    }
    if rng.random() < 0.4:
        listing["ocr_text"] = f"{brand.upper()} MADE IN {country.upper()}"
    return listing, {"noun": noun, "brand": brand, "country": country, **truth}


def generate_corpus(data_dir, seed: int = 0, n_listings: int = 600) -> dict:
    """Write raw listings, images, crop items, public sources, eval gold/pred and mix spec."""
    data = Path(data_dir)
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    images = data / "images"

    raw_lines, truths = [], []
    for i in range(n_listings):
        listing, truth = _synth_listing(i, rng)
        atomic_write_bytes(images / listing["image_refs"][0], _png(_smooth_field(nrng)))
        raw_lines.append(dumps(listing))
        truths.append((listing, truth))
    # a handful of broken records, kept under the default 1% failure budget
    bad = [
        '{"listing_id": "BROKEN", "title": "truncated',
        dumps({"listing_id": "NOIMG", "title": "No images", "aspects": []}),
        dumps({"listing_id": "EMPTYIMG", "title": "Empty", "image_refs": [" "]}),
        raw_lines[0],  # duplicate listing_id
    ]
    for k, line in enumerate(bad):
        raw_lines.insert(97 * (k + 1), line)
    atomic_write_text(data / "raw_listings.jsonl", "\n".join(raw_lines) + "\n")

    # multi-image items: one primary, near-duplicate reshoots and a few distinct views
    items = []
    for k in range(N_CROP_ITEMS):
        base = _smooth_field(nrng)
        arrays = [base]
        arrays += [_brighter(base, 1.0 + 0.005 * j) for j in range(1, 8)]
        arrays += [_smooth_field(nrng) for _ in range(IMAGES_PER_CROP_ITEM - len(arrays))]
        refs = []
        for j, arr in enumerate(arrays):
            ref = f"items/item_{k:03d}_{j:02d}.png"
            atomic_write_bytes(images / ref, _png(arr))
            refs.append(ref)
        items.append({"item_id": f"item_{k:03d}", "image_refs": refs})
    write_jsonl(data / "crop_items.jsonl", items)

    public = data / "public"
    recap = [{"id": f"recap-{j}", "image": f"recap/{j}.jpg",
              "conversations": [{"from": "human", "value": "<image>\nDescribe the image."},
                                {"from": "gpt", "value": f"A synthetic scene number {j}."}]}
             for j in range(40)]
    write_json(public / "recap.json", recap)
    docvqa = [{"id": f"doc-{j}", "image": f"doc/{j}.png",
               "conversations": [{"from": "human", "value": "<image>\nWhat is the invoice total?"},
                                 {"from": "gpt", "value": f"{10 + j}.00"}]}
              for j in range(50)]
    write_jsonl(public / "docvqa.jsonl", docvqa)
    atomic_write_text(data / "manifest.yaml", (
        "datasets:\n"
        "  - json_path: ./public/recap.json\n"
        "    sampling_strategy: all\n"
        "  - json_path: ./public/docvqa.jsonl\n"
        '    sampling_strategy: "first:10%"\n'
    ))
    atomic_write_text(data / "mix_spec.yaml", (
        "total: 1000\n"
        "components:\n"
        "  - {task: vqa, fraction: 0.45}\n"
        "  - {task: dae, fraction: 0.30}\n"
        "  - {task: pif, fraction: 0.125}\n"
        "  - {task: listings, fraction: 0.125}\n"
    ))

    gold, preds = _eval_records(truths, rng)
    write_jsonl(data / "gold.jsonl", gold)
    write_jsonl(data / "pred.jsonl", preds)
    return {"listings": n_listings, "bad_lines": len(bad), "crop_items": len(items),
            "gold": len(gold)}


def _annotate(gold: dict) -> str:
    req = ChatRequest(user_text="Extract the attributes as JSON.")
    return MockEndpoint("annotate").complete(req, {"gold": gold}).text


def _eval_records(truths, rng: random.Random):
    gold, preds = [], []

    def add(rid, task, value, output, refs=()):
        gold.append({"id": rid, "task": task, "image_refs": list(refs), "context": None,
                     "gold_value": value})
        preds.append({"id": rid, "output": output})

    for listing, t in truths[:200]:
        said = t["Color"] if rng.random() < 0.75 else rng.choice(COLORS)
        add(f"aspect-{listing['listing_id']}", "aspect", {"name": "Color", "value": t["Color"]},
            f"The color is {said}.", listing["image_refs"])

    for listing, t in truths[200:320]:
        r = rng.random()
        if r < 0.65:
            out = f"This item has a {t['Pattern'].lower()} pattern."
        elif r < 0.85:
            out = f"It looks {rng.choice(PATTERNS).lower()}."
        else:
            out = "Either striped or plaid, hard to say."
        add(f"fashion-{listing['listing_id']}", "fashion",
            {"attribute": "pattern", "class": t["Pattern"], "classes": list(PATTERNS)}, out,
            listing["image_refs"])

    for listing, t in truths[320:470]:
        g = {k: v for k, v in t.items() if k not in ("noun", "brand", "country")}
        p = dict(g)
        if rng.random() < 0.3:
            p.pop(rng.choice(sorted(p)))
        if rng.random() < 0.3:
            p["Color"] = rng.choice(COLORS)
        if rng.random() < 0.2:
            p["Brand"] = t["brand"]
        out = "I cannot tell from this photo." if rng.random() < 0.05 else \
            "Attributes: " + _annotate(p)
        add(f"dae-{listing['listing_id']}", "dae", g, out, listing["image_refs"])

    for listing, t in truths[470:550]:
        g = {
            "Product Identifiers/Brand": t["brand"],
            "Product Attributes/Material": t.get("Material", "Plastic"),
            "Product Attributes/Color": t["Color"],
            "Regulatory/Country of Origin": t["country"],
        }
        nested: dict = {}
        for key, value in g.items():
            group, field = key.split("/")
            if rng.random() < 0.15:
                continue
            if rng.random() < 0.15:
                value = rng.choice(COUNTRIES + COLORS)
            nested.setdefault(group, {})[field] = value
        if rng.random() < 0.3:
            nested.setdefault("Regulatory", {})["Warning"] = "Keep away from fire"
        out = _annotate(nested) if nested else "No attributes visible."
        add(f"intel-{listing['listing_id']}", "item_intel", g, out, listing["image_refs"])
    return gold, preds


def run_demo(out_dir, cfg, n_listings: int = 600, mix_total: int = 1000, config_path=None) -> int:
    """Generate data under ``<out>/data`` and run every stage; returns the first non-zero exit."""
    from .cli import main

    out = Path(out_dir)
    data = out / "data"
    info = generate_corpus(data, cfg.seed, n_listings)
    logger.info("demo corpus: %s", info)

    common = ["--seed", str(cfg.seed), "--parallelism", str(cfg.parallelism)]
    stages = [
        ["ingest", "--in", data / "raw_listings.jsonl", "--out", out / "ingest" / "listings.jsonl",
         "--reject-log", out / "ingest" / "rejects.jsonl"],
        ["curate", "--in", out / "ingest" / "listings.jsonl", "--out", out / "curate" / "verified.jsonl",
         "--mode", "llm", "--captioner", "mock", "--verifier", "mock",
         "--images-dir", data / "images", "--stats", out / "curate" / "stats.json"],
        ["crops", "--items", data / "crop_items.jsonl", "--images-dir", data / "images",
         "--out", out / "crops", "--detector", "mock"],
        ["mix", "--manifest", data / "manifest.yaml", "--spec", data / "mix_spec.yaml",
         "--total", str(mix_total), "--verified", out / "curate" / "verified.jsonl",
         "--out", out / "mix" / "mix.jsonl", "--report", out / "mix" / "report.json"],
        ["eval", "--task", "aspect,fashion,dae,item-intel", "--gold", data / "gold.jsonl",
         "--pred", data / "pred.jsonl", "--judge", "mock", "--images-dir", data / "images",
         "--report", out / "eval" / "report.json"],
        ["cost", "--items", out / "crops" / "plans.jsonl", "--report", out / "cost" / "report.json"],
    ]
    if config_path:
        common += ["--config", str(config_path)]
    for argv in stages:
        argv = [str(a) for a in argv] + common
        logger.info("demo stage: %s", argv[0])
        code = main(argv)
        if code != 0:
            logger.error("demo stage %s exited %d", argv[0], code)
            return code

    digests = {k: v for k, v in tree_digests(out).items()
               if not k.endswith(".run.json") and Path(k).name != RUN_MANIFEST}
    write_json(out / RUN_MANIFEST, {
        "command": "demo",
        "seed": cfg.seed,
        "config_fingerprint": cfg.fingerprint(),
        "outputs": digests,
    })
    report = json.loads((out / "eval" / "report.json").read_text(encoding="utf-8"))
    for task, block in report["tasks"].items():
        headline = block.get("accuracy", block.get("macro_f1"))
        print(f"{task}: {headline:.3f}")
    return 0
