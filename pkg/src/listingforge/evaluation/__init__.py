from ..text import normalize
from .judge import (LABELS, UV, VC, VI, ItemIntelReport, ItemVerdicts, JudgeProtocolError, judge_item,
                    score_item_intelligence)
from .report import GoldRecord, load_gold, load_predictions, run_eval, write_report
from .scoring import (PRF, AttributeParseError, macro_dae, parse_attribute_document, parse_or_empty,
                      score_aspect, score_classification, score_dae)

__all__ = [
    "normalize",
    "LABELS", "UV", "VC", "VI", "ItemIntelReport", "ItemVerdicts", "JudgeProtocolError",
    "judge_item", "score_item_intelligence",
    "GoldRecord", "load_gold", "load_predictions", "run_eval", "write_report",
    "PRF", "AttributeParseError", "macro_dae", "parse_attribute_document", "parse_or_empty",
    "score_aspect", "score_classification", "score_dae",
]
