"""Benchmark runs over gold/prediction JSONL files and the JSON report they produce."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..endpoints import EndpointError
from ..io import read_jsonl, write_json
from ..templates import fingerprint, load_templates
from .judge import JudgeProtocolError, judge_item, score_item_intelligence
from .scoring import macro_dae, mentioned_classes, parse_or_empty, score_aspect, score_classification

logger = logging.getLogger(__name__)

TASKS = ("aspect", "fashion", "dae", "item_intel")


class GoldSchemaError(ValueError):
    pass


def canonical_task(name: str) -> str:
    t = name.replace("-", "_")
    if t not in TASKS:
        raise GoldSchemaError(f"unknown task {name!r}; expected one of {TASKS}")
    return t


@dataclass(frozen=True)
class GoldRecord:
    id: str
    task: str
    gold_value: object
    image_refs: tuple = ()
    context: Optional[dict] = None

    def __post_init__(self):
        g = self.gold_value
        if self.task == "aspect":
            ok = isinstance(g, dict) and {"name", "value"} <= g.keys()
        elif self.task == "fashion":
            ok = (isinstance(g, dict) and {"attribute", "class", "classes"} <= g.keys()
                  and g["class"] in g["classes"])
        else:
            ok = isinstance(g, dict)
        if not ok:
            raise GoldSchemaError(f"record {self.id}: gold_value does not fit task {self.task}")

    @classmethod
    def from_dict(cls, d: dict) -> "GoldRecord":
        try:
            task = canonical_task(d["task"])
            gold = d["gold_value"]
            if task == "aspect" and isinstance(gold, list):
                gold = {"name": gold[0], "value": gold[1]}
            return cls(str(d["id"]), task, gold, tuple(d.get("image_refs") or ()), d.get("context"))
        except KeyError as e:
            raise GoldSchemaError(f"gold record missing {e.args[0]}") from None

    def to_dict(self) -> dict:
        return {"id": self.id, "task": self.task, "image_refs": list(self.image_refs),
                "context": self.context, "gold_value": self.gold_value}


def load_gold(path) -> list[GoldRecord]:
    return [GoldRecord.from_dict(d) for d in read_jsonl(path)]


def load_predictions(path) -> dict[str, str]:
    out = {}
    for d in read_jsonl(path):
        out[str(d["id"])] = d.get("output") or ""
    return out


def _outputs(records, preds):
    missing = 0
    outs = []
    for r in records:
        if r.id not in preds:
            missing += 1
        outs.append(preds.get(r.id, ""))
    return outs, missing


def eval_aspect(records, preds) -> dict:
    outs, missing = _outputs(records, preds)
    hits = sum(score_aspect(r.gold_value["value"], o) for r, o in zip(records, outs))
    return {"accuracy": hits / len(records), "n": len(records), "missing_predictions": missing}


def eval_fashion(records, preds) -> dict:
    outs, missing = _outputs(records, preds)
    hits = ambiguous = 0
    for r, o in zip(records, outs):
        g = r.gold_value
        hits += score_classification(g["class"], g["classes"], o)
        ambiguous += len(mentioned_classes(g["classes"], o)) > 1
    return {"accuracy": hits / len(records), "n": len(records), "ambiguous": ambiguous,
            "missing_predictions": missing}


def eval_dae(records, preds) -> dict:
    outs, missing = _outputs(records, preds)
    pairs, failures = [], 0
    for r, o in zip(records, outs):
        mapping, ok = parse_or_empty(o)
        failures += not ok
        pairs.append((r.gold_value, mapping))
    prf = macro_dae(pairs)
    return {"macro_f1": prf.f1, "macro_precision": prf.precision, "macro_recall": prf.recall,
            "n": len(records), "parse_failures": failures, "missing_predictions": missing}


def eval_item_intel(records, preds, judge, load_image=None, templates=None, parallelism=1):
    outs, missing = _outputs(records, preds)
    parse_failures = 0
    jobs = []
    for r, o in zip(records, outs):
        mapping, ok = parse_or_empty(o)
        parse_failures += not ok
        jobs.append((r, mapping))

    def work(job):
        r, mapping = job
        images = [load_image(ref) for ref in r.image_refs] if load_image else []
        try:
            return judge_item(r.gold_value, mapping, images, judge, r.id, templates)
        except (JudgeProtocolError, EndpointError) as e:
            logger.warning("item %s excluded: %s", r.id, e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(work, jobs))
    judged = [x for x in results if x is not None]
    errors = len(results) - len(judged)
    if not judged:
        return None, errors
    rep = score_item_intelligence(judged)
    block = rep.to_dict()
    block.update(parse_failures=parse_failures, judge_errors=errors, missing_predictions=missing)
    return block, errors


def run_eval(tasks, gold, preds, judge=None, images_dir=None, templates=None, parallelism=1,
             seed: Optional[int] = None) -> dict:
    """Score the requested tasks; tasks with no gold records are reported as warnings."""
    templates = templates or load_templates()
    tasks = [canonical_task(t) for t in tasks]
    load_image = None
    if images_dir is not None:
        base = Path(images_dir)

        def load_image(ref):
            return (base / ref).read_bytes()

    blocks, warnings = {}, []
    for task in tasks:
        records = [r for r in gold if r.task == task]
        if not records:
            warnings.append(f"{task}: no gold records, task omitted")
            continue
        if task == "aspect":
            blocks[task] = eval_aspect(records, preds)
        elif task == "fashion":
            blocks[task] = eval_fashion(records, preds)
        elif task == "dae":
            blocks[task] = eval_dae(records, preds)
        else:
            if judge is None:
                warnings.append("item_intel: no judge configured, task omitted")
                continue
            block, errors = eval_item_intel(records, preds, judge, load_image, templates, parallelism)
            if block is None:
                warnings.append(f"item_intel: all {errors} items failed judging, task omitted")
                continue
            blocks[task] = block
    return write_report(blocks, warnings, {
        "seed": seed,
        "templates_fingerprint": fingerprint(templates),
        "judge": getattr(judge, "model_name", None) if judge is not None else None,
        "tasks": tasks,
    })


def write_report(blocks: dict, warnings=(), config: Optional[dict] = None, path=None) -> dict:
    """Assemble (and optionally write) the report document."""
    if not blocks and not warnings:
        raise ValueError("report needs at least one scored task")
    report = {"tasks": blocks, "warnings": list(warnings), "config": config or {}}
    if path is not None:
        write_json(path, report)
    return report
