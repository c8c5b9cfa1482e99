"""String-match scorers for aspect, classification and attribute-extraction benchmarks."""

import json
from fractions import Fraction
from typing import NamedTuple

from ..text import contains_word, normalize


class AttributeParseError(ValueError):
    pass


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _value(gold):
    if isinstance(gold, (tuple, list)):
        return gold[1]
    if isinstance(gold, dict):
        return gold["value"]
    return gold


def score_aspect(gold, predicted_text: str) -> int:
    """1 if the gold value equals the prediction or occurs in it as whole words.

    ``gold`` is a ``(name, value)`` pair or a bare value.
    """
    g, p = normalize(str(_value(gold))), normalize(predicted_text)
    if g == p:
        return 1
    return int(contains_word(p, g))


def mentioned_classes(classes, predicted_text: str) -> list[str]:
    p = normalize(predicted_text)
    return [c for c in classes if contains_word(p, normalize(c))]


def score_classification(gold_class: str, classes, predicted_text: str) -> int:
    """1 iff the prediction mentions exactly one class and it is the gold one."""
    hits = mentioned_classes(classes, predicted_text)
    return int(len(hits) == 1 and normalize(hits[0]) == normalize(gold_class))


def _find_object(text: str):
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    return None


def _to_str(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, list):
        return "; ".join(_to_str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return str(v)
    return json.dumps(v, ensure_ascii=False, sort_keys=True)


def parse_attribute_document(model_output: str) -> dict[str, str]:
    """First JSON object in free text, flattened one level with ``/``-joined keys.

    Raises AttributeParseError when the text holds no JSON object.

    >>> parse_attribute_document('Here you go: {"format":"DVD","genres":["Action","Drama"]}')
    {'format': 'DVD', 'genres': 'Action; Drama'}
    """
    obj = _find_object(model_output or "")
    if obj is None:
        raise AttributeParseError("no JSON object found")
    out = {}
    for key, value in obj.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                out[f"{key}/{sub}"] = _to_str(v)
        else:
            out[str(key)] = _to_str(value)
    return out


def parse_or_empty(model_output: str) -> tuple[dict, bool]:
    """(mapping, parsed_ok); failures become an empty mapping."""
    try:
        return parse_attribute_document(model_output), True
    except AttributeParseError:
        return {}, False


def _ratio(a: int, b: int) -> Fraction:
    return Fraction(a, b) if b else Fraction(0)


def harmonic(p: Fraction, r: Fraction) -> Fraction:
    return 2 * p * r / (p + r) if p + r else Fraction(0)


def dae_exact(gold: dict, predicted: dict) -> tuple[Fraction, Fraction, Fraction]:
    gold_by_key = {}
    for k, v in gold.items():
        gold_by_key.setdefault(normalize(str(k)), v)
    matched = set()
    for k, v in predicted.items():
        nk = normalize(str(k))
        if nk in gold_by_key and nk not in matched and score_aspect(_to_str(gold_by_key[nk]), _to_str(v)):
            matched.add(nk)
    p = _ratio(len(matched), len(predicted))
    r = _ratio(len(matched), len(gold_by_key))
    return p, r, harmonic(p, r)


def score_dae(gold: dict, predicted: dict) -> PRF:
    """Pair-level precision/recall/F1; a pair matches on normalized key and whole-word value."""
    return PRF(*(float(x) for x in dae_exact(gold, predicted)))


def macro_dae(pairs) -> PRF:
    """Macro-averaged P/R/F1 over (gold, predicted) mapping pairs."""
    rows = [dae_exact(g, p) for g, p in pairs]
    if not rows:
        raise ValueError("macro_dae needs at least one record")
    n = len(rows)
    return PRF(*(float(sum((r[i] for r in rows), Fraction(0)) / n) for i in range(3)))
