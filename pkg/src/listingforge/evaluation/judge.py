"""LLM-as-a-judge scoring for multi-image item intelligence.

Judge wire contract (carried as the user text of a chat request)::

    request  {"gold": {...}, "predicted": {...}, "images": [<base64>, ...]}
    response {"verdicts": [{"key": ..., "label": ...}], "matched_gold_keys": [...]}
"""

import base64
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from ..endpoints import ChatRequest, Endpoint
from ..templates import load_templates
from ..text import normalize
from .scoring import _ratio, harmonic

VC = "verifiable-correct"
VI = "verifiable-incorrect"
UV = "unverifiable"
LABELS = (VC, VI, UV)


class JudgeProtocolError(ValueError):
    pass


@dataclass
class ItemVerdicts:
    item_id: str
    gold_keys: list
    verdicts: list  # (predicted key, label) in prediction order
    matched: list = field(default_factory=list)  # gold keys recovered

    @property
    def n_predicted(self) -> int:
        return len(self.verdicts)

    def count(self, label: str) -> int:
        return sum(1 for _, lab in self.verdicts if lab == label)


@dataclass
class ItemIntelReport:
    macro_f1: float
    macro_precision: float
    macro_recall: float
    verifiable_correct: float
    verifiable_incorrect: float
    unverifiable: float
    n_items: int
    n_predicted_entries: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(vars(self))


def parse_judge_reply(text: str, gold: dict, predicted: dict) -> tuple[list, list]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise JudgeProtocolError(f"judge reply is not JSON: {e}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("verdicts"), list):
        raise JudgeProtocolError("judge reply lacks a verdicts list")
    verdicts = []
    for v in doc["verdicts"]:
        if not isinstance(v, dict) or v.get("label") not in LABELS or "key" not in v:
            raise JudgeProtocolError(f"bad verdict entry {v!r}")
        verdicts.append((str(v["key"]), v["label"]))
    keys = [k for k, _ in verdicts]
    if sorted(keys) != sorted(str(k) for k in predicted):
        raise JudgeProtocolError("verdicts must cover each predicted key exactly once")
    gold_by_norm: dict = {}
    for k in gold:
        gold_by_norm.setdefault(normalize(str(k)), k)
    matched = []
    for k in doc.get("matched_gold_keys") or []:
        g = gold_by_norm.get(normalize(str(k)))
        if g is None:
            raise JudgeProtocolError(f"matched key {k!r} is not a gold key")
        if g not in matched:
            matched.append(g)
    order = {k: i for i, k in enumerate(predicted)}
    verdicts.sort(key=lambda kv: order[kv[0]])
    return verdicts, matched


def judge_item(gold: dict, predicted: dict, images, judge: Endpoint, item_id: str = "",
               templates: Optional[dict] = None) -> ItemVerdicts:
    """One verdict per predicted entry plus the set of recovered gold keys.

    ``images`` are raw image bytes; they travel base64-encoded inside the request text.
    """
    if not predicted:
        return ItemVerdicts(item_id, list(gold), [], [])
    templates = templates or load_templates()
    request = {
        "gold": gold,
        "predicted": predicted,
        "images": [base64.b64encode(b).decode("ascii") for b in images],
    }
    req = ChatRequest(
        system_text=templates["judge_system"],
        user_text=templates["judge_user"].format(request_json=json.dumps(request, ensure_ascii=False)),
    )
    resp = judge.complete(req, {"gold": gold, "predicted": predicted})
    verdicts, matched = parse_judge_reply(resp.text, gold, predicted)
    return ItemVerdicts(item_id, list(gold), verdicts, matched)


def item_scores(item: ItemVerdicts) -> tuple[Fraction, Fraction, Fraction]:
    p = _ratio(item.count(VC), item.n_predicted)
    r = _ratio(len(item.matched), len(item.gold_keys))
    return p, r, harmonic(p, r)


def score_item_intelligence(items) -> ItemIntelReport:
    """Macro (per-item) P/R/F1 and entry-pooled verdict fractions.

    Items that predicted nothing score zero rather than being dropped.
    """
    items = list(items)
    if not items:
        raise ValueError("score_item_intelligence needs at least one item")
    n = len(items)
    rows = [item_scores(it) for it in items]
    macro = [sum((r[i] for r in rows), Fraction(0)) / n for i in range(3)]

    total = sum(it.n_predicted for it in items)
    pooled = {lab: _ratio(sum(it.count(lab) for it in items), total) for lab in LABELS}
    with_preds = [it for it in items if it.n_predicted]
    averaged = {
        lab: float(sum((_ratio(it.count(lab), it.n_predicted) for it in with_preds), Fraction(0))
                   / len(with_preds)) if with_preds else 0.0
        for lab in LABELS
    }
    return ItemIntelReport(
        macro_f1=float(macro[2]),
        macro_precision=float(macro[0]),
        macro_recall=float(macro[1]),
        verifiable_correct=float(pooled[VC]),
        verifiable_incorrect=float(pooled[VI]),
        unverifiable=float(pooled[UV]),
        n_items=n,
        n_predicted_entries=total,
        diagnostics={"item_averaged_verdicts": averaged, "items_without_predictions": n - len(with_preds)},
    )
