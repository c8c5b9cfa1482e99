"""Template rendering of verified listings into single-image instruction samples."""

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from ..curate import VerifiedListing
from ..templates import load_templates
from ..text import contains_word, normalize

IMAGE_TOKEN = "<image>"

TASKS = ("vqa", "dae", "pif", "listings")

DEFAULT_VARIANTS = {
    "vqa": ("free_form", "free_form+ctx", "yes_no", "yes_no+ctx", "description", "description+ctx"),
    "dae": ("plain", "ctx", "ocr", "constrained"),
    "pif": ("include", "avoid", "length", "bullets"),
    "listings": ("plain",),
}

_BASES = {
    "vqa": {"free_form", "yes_no", "description"},
    "dae": {"plain"},
    "pif": {"include", "avoid", "length", "bullets"},
    "listings": {"plain"},
}
_MODIFIERS = {
    "vqa": {"ctx"},
    "dae": {"ctx", "ocr", "constrained"},
    "pif": set(),
    "listings": set(),
}

LENGTH_BUDGETS = (10, 15, 20, 30)

FALLBACK_DISTRACTORS = {
    "color": ("Red", "Blue", "Black", "White", "Green", "Beige"),
    "material": ("Leather", "Cotton", "Polyester", "Metal", "Wood", "Plastic"),
    "brand": ("Acme", "Northwind", "Contoso", "Globex"),
    "pattern": ("Solid", "Striped", "Floral", "Plaid"),
    "size": ("S", "M", "L", "XL"),
}
GENERIC_DISTRACTORS = ("Unknown", "Other", "Assorted", "Not specified")


class SkipRecord(Exception):
    """The record cannot be rendered for this task/variant; skip it."""


@dataclass
class InstructionSample:
    id: str
    image_refs: list
    conversations: list  # (role, text), role in {"user", "assistant"}
    task: str
    variant: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.conversations) < 2:
            raise ValueError("a sample needs at least two turns")
        for i, (role, _) in enumerate(self.conversations):
            if role != ("user" if i % 2 == 0 else "assistant"):
                raise ValueError("turns must alternate user/assistant starting with user")

    @property
    def answer(self) -> str:
        return self.conversations[1][1]

    def to_record(self) -> dict:
        roles = {"user": "human", "assistant": "gpt"}
        rec = {
            "id": self.id,
            "image": self.image_refs[0] if self.image_refs else None,
            "image_refs": list(self.image_refs),
            "conversations": [{"from": roles[r], "value": t} for r, t in self.conversations],
            "task": self.task,
            "variant": self.variant,
        }
        if self.meta:
            rec["meta"] = self.meta
        return rec


def parse_variant(task: str, variant: str) -> tuple[str, frozenset]:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    parts = [p for p in variant.split("+") if p]
    if task == "dae" and parts and parts[0] in _MODIFIERS["dae"]:
        parts = ["plain"] + parts
    if not parts or parts[0] not in _BASES[task]:
        raise ValueError(f"unknown {task} variant {variant!r}")
    mods = frozenset(parts[1:])
    bad = mods - _MODIFIERS[task]
    if bad:
        raise ValueError(f"unknown {task} variant modifier(s) {sorted(bad)}")
    return parts[0], mods


def aspect_mapping(aspects) -> dict:
    """Name -> value, grouping repeated names (by normalized form) into lists."""
    out: dict = {}
    canon: dict = {}
    for name, value in aspects:
        key = canon.setdefault(normalize(name), name)
        if key not in out:
            out[key] = value
        elif isinstance(out[key], list):
            out[key].append(value)
        else:
            out[key] = [out[key], value]
    return out


def build_distractor_index(records) -> dict:
    index: dict = {}
    for rec in records:
        for name, value in rec.verified_aspects:
            index.setdefault(normalize(name), {}).setdefault(normalize(value), value)
    return {k: [v[n] for n in sorted(v)] for k, v in index.items()}


def pick_distractor(name: str, own_values, index: dict, rng: random.Random) -> str:
    taken = {normalize(v) for v in own_values}
    nname = normalize(name)
    for pool in (index.get(nname, ()), FALLBACK_DISTRACTORS.get(nname, ()), GENERIC_DISTRACTORS):
        options = [v for v in pool if normalize(v) not in taken]
        if options:
            return rng.choice(options)
    raise SkipRecord(f"no distractor for {name!r}")


def _noun(listing) -> str:
    return listing.category_path[-1].lower() if listing.category_path else "item"


def _describe(aspects, noun: str) -> str:
    if not aspects:
        return f"This is a {noun}."
    parts = [f"{n.lower()} {v}" for n, v in aspects]
    return f"This {noun} has " + ", ".join(parts) + "."


def _user_turn(prompt: str, listing, with_ctx: bool, templates) -> str:
    prefix = ""
    if with_ctx:
        prefix = templates["context_prefix"].format(
            title=listing.title, category=" > ".join(listing.category_path))
    return f"{IMAGE_TOKEN}\n{prefix}{prompt}"


def render_instruction(v: VerifiedListing, task: str, variant: str, seed: int = 0,
                       distractors: Optional[dict] = None,
                       templates: Optional[dict] = None) -> InstructionSample:
    """Instantiate one templated conversation; raises SkipRecord on unmet preconditions."""
    base, mods = parse_variant(task, variant)
    templates = templates or load_templates()
    listing = v.listing
    verified = list(v.verified_aspects)
    rng = random.Random(f"{seed}:{listing.listing_id}:{task}:{variant}")
    ctx = "ctx" in mods
    meta: dict = {}

    if task != "listings" and not (task == "vqa" and base == "description") and not verified:
        raise SkipRecord("no verified aspects")

    if task == "vqa":
        if base == "description":
            prompt, answer = templates["vqa_description"], v.caption.text
        else:
            name, value = rng.choice(verified)
            fields = {"name": name, "name_lower": name.lower()}
            if base == "free_form":
                prompt, answer = templates["vqa_free_form"].format(**fields, value=value), value
            else:
                truthy = rng.random() < 0.5
                own = [val for n, val in verified if normalize(n) == normalize(name)]
                asked = value if truthy else pick_distractor(name, own, distractors or {}, rng)
                prompt = templates["vqa_yes_no"].format(**fields, value=asked)
                answer = "Yes" if truthy else "No"
                meta["truthy"] = truthy
            meta["aspect"] = [name, value]

    elif task == "dae":
        mapping = aspect_mapping(verified)
        prompt = templates["dae"]
        if "ocr" in mods:
            if not listing.ocr_text:
                raise SkipRecord("no ocr_text")
            prompt += templates["dae_ocr_suffix"].format(ocr_text=listing.ocr_text)
        if "constrained" in mods:
            prompt += templates["dae_constrained_suffix"].format(keys=", ".join(mapping))
        answer = json.dumps(mapping, ensure_ascii=False)

    elif task == "pif":
        noun = _noun(listing)
        if base == "include":
            term = rng.choice(verified)[1]
            prompt = templates["pif_include"].format(term=term)
            answer = _describe(verified, noun)
            meta["term"] = term
        elif base == "avoid":
            name, term = rng.choice(verified)
            nterm = normalize(term)
            rest = [(n, val) for n, val in verified
                    if not contains_word(normalize(f"{n} {val}"), nterm)]
            answer = _describe(rest, noun)
            if contains_word(normalize(answer), nterm):
                raise SkipRecord(f"cannot describe without {term!r}")
            prompt = templates["pif_avoid"].format(term=term)
            meta["term"] = term
        elif base == "length":
            budget = rng.choice(LENGTH_BUDGETS)
            words = _describe(verified, noun).split()
            answer = " ".join(words[:budget])
            if len(words) > budget:
                answer = answer.rstrip(",.") + "."
            prompt = templates["pif_length"].format(budget=budget)
            meta["budget"] = budget
        else:
            prompt = templates["pif_bullets"]
            answer = "\n".join(f"- {n}: {val}" for n, val in verified)

    else:
        if not listing.title:
            raise SkipRecord("no title")
        prompt = templates["listing"]
        answer = json.dumps({
            "title": listing.title,
            "category": " > ".join(listing.category_path),
            "aspects": aspect_mapping(verified),
        }, ensure_ascii=False)

    return InstructionSample(
        id=f"{listing.listing_id}-{task}-{variant}",
        image_refs=[listing.image_refs[0]],
        conversations=[("user", _user_turn(prompt, listing, ctx, templates)), ("assistant", answer)],
        task=task,
        variant=variant,
        meta=meta,
    )
