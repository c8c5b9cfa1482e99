"""Proportioned instruction mixes with exact integer allocation."""

import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import yaml

from ..templates import fingerprint, load_templates
from .render import DEFAULT_VARIANTS, TASKS, SkipRecord, build_distractor_index, parse_variant, render_instruction

# share of the e-commerce total per task
DEFAULT_FRACTIONS = {"vqa": 0.45, "dae": 0.30, "pif": 0.125, "listings": 0.125}


class MixConfigError(ValueError):
    pass


class MixShortfallError(ValueError):
    def __init__(self, shortfalls: list[dict]):
        detail = "; ".join(
            f"{s['task']}{'/' + s['variant'] if s.get('variant') else ''}: "
            f"need {s['needed']}, have {s['available']}"
            for s in shortfalls)
        super().__init__(f"record pools too small: {detail}")
        self.shortfalls = shortfalls


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def allocate_counts(total: int, weights, tol: float = 1e-9) -> list[int]:
    """Largest-remainder apportionment of ``total`` over fractional weights.

    Weights must sum to 1 within ``tol``; they are rescaled to sum exactly to 1
    so the counts always add up to ``total``. Remainder ties go to the earlier entry.
    """
    if total < 0:
        raise MixConfigError("total must be >= 0")
    fr = [_exact(w) for w in weights]
    if any(f < 0 for f in fr):
        raise MixConfigError("fractions must be non-negative")
    s = sum(fr, Fraction(0))
    if not fr or abs(float(s) - 1.0) > tol:
        raise MixConfigError(f"fractions sum to {float(s)!r}, expected 1")
    quotas = [total * f / s for f in fr]
    counts = [q.numerator // q.denominator for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(fr)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass
class Component:
    task: str
    fraction: float
    variants: dict = field(default_factory=dict)  # variant tag -> weight

    def __post_init__(self):
        if self.task not in TASKS:
            raise MixConfigError(f"unknown task {self.task!r}")
        if not self.variants:
            defaults = DEFAULT_VARIANTS[self.task]
            self.variants = {v: Fraction(1, len(defaults)) for v in defaults}
        for v in self.variants:
            try:
                parse_variant(self.task, v)
            except ValueError as e:
                raise MixConfigError(str(e)) from None
        total = sum((_exact(w) for w in self.variants.values()), Fraction(0))
        if abs(float(total) - 1.0) > 1e-9:
            raise MixConfigError(f"{self.task}: variant weights sum to {float(total)!r}, expected 1")


@dataclass
class MixSpec:
    total: int
    components: list
    seed: int = 0

    def __post_init__(self):
        if self.total < 0:
            raise MixConfigError("total must be >= 0")
        tasks = [c.task for c in self.components]
        if len(set(tasks)) != len(tasks):
            raise MixConfigError("each task may appear once")
        s = sum((_exact(c.fraction) for c in self.components), Fraction(0))
        if abs(float(s) - 1.0) > 1e-9:
            raise MixConfigError(f"component fractions sum to {float(s)!r}, expected 1")

    @classmethod
    def default(cls, total: int, seed: int = 0) -> "MixSpec":
        return cls(total, [Component(t, f) for t, f in DEFAULT_FRACTIONS.items()], seed)

    @classmethod
    def from_dict(cls, d: dict, seed: Optional[int] = None) -> "MixSpec":
        if "total" not in d:
            raise MixConfigError("mix spec: total missing")
        comps = d.get("components")
        if comps is None:
            comps = [{"task": t, "fraction": f} for t, f in DEFAULT_FRACTIONS.items()]
        components = []
        for i, c in enumerate(comps):
            if "task" not in c or "fraction" not in c:
                raise MixConfigError(f"component {i}: task and fraction are required")
            components.append(Component(c["task"], c["fraction"], dict(c.get("variants") or {})))
        return cls(int(d["total"]), components, int(seed if seed is not None else d.get("seed", 0)))

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> "MixSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f) or {}, seed)


def compose_mix(pools: dict, spec: MixSpec, templates: Optional[dict] = None):
    """Render ``spec.total`` samples drawn from per-task pools of VerifiedListing.

    Each record is used at most once per task. Returns (samples, report).
    """
    templates = templates or load_templates()
    counts = allocate_counts(spec.total, [c.fraction for c in spec.components])

    shortfalls = []
    for comp, n in zip(spec.components, counts):
        have = len(pools.get(comp.task, ()))
        if have < n:
            shortfalls.append({"task": comp.task, "needed": n, "available": have})
    if shortfalls:
        raise MixShortfallError(shortfalls)

    seen, everything = set(), []
    for pool in pools.values():
        for rec in pool:
            if rec.listing_id not in seen:
                seen.add(rec.listing_id)
                everything.append(rec)
    distractors = build_distractor_index(everything)

    samples = []
    report_components = {}
    skipped = 0
    for comp, n in zip(spec.components, counts):
        pool = pools.get(comp.task, [])
        variants = list(comp.variants)
        vcounts = allocate_counts(n, [comp.variants[v] for v in variants])
        order = list(range(len(pool)))
        random.Random(f"{spec.seed}:{comp.task}").shuffle(order)
        unused = deque(order)
        per_variant = {}
        for variant, want in zip(variants, vcounts):
            got, deferred = 0, []
            while got < want and unused:
                idx = unused.popleft()
                try:
                    samples.append(render_instruction(pool[idx], comp.task, variant, spec.seed,
                                                      distractors, templates))
                    got += 1
                except SkipRecord:
                    deferred.append(idx)
                    skipped += 1
            unused.extendleft(reversed(deferred))
            if got < want:
                raise MixShortfallError([{"task": comp.task, "variant": variant,
                                          "needed": want, "available": got}])
            per_variant[variant] = got
        report_components[comp.task] = {
            "target_fraction": float(comp.fraction),
            "count": n,
            "variants": per_variant,
        }

    random.Random(f"{spec.seed}:shuffle").shuffle(samples)
    report = {
        "seed": spec.seed,
        "total": spec.total,
        "components": report_components,
        "skipped_renders": skipped,
        "templates_fingerprint": fingerprint(templates),
    }
    return samples, report
