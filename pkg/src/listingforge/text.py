"""String normalization shared by cleaning, verification and scoring."""

import re
import unicodedata

_WS = re.compile(r"\s+")
_TAG = re.compile(r"<[^<>]*>")
_ENTITIES = {
    "&lt;": "<",
    "&gt;": ">",
    "&quot;": '"',
    "&#39;": "'",
    "&apos;": "'",
}


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(s: str) -> str:
    start, end = 0, len(s)
    while start < end and _is_punct(s[start]):
        start += 1
    while end > start and _is_punct(s[end - 1]):
        end -= 1
    return s[start:end]


def _normalize_once(text: str) -> str:
    s = unicodedata.normalize("NFC", text.lower())
    s = _WS.sub(" ", s).strip()
    return _strip_punct(s).strip()


def normalize(text: str) -> str:
    """Canonical comparison form: NFC, lowercase, single spaces, no edge punctuation.

    >>> normalize("  Crew  Neck. ")
    'crew neck'
    """
    prev, cur = None, text
    # lowercasing can break composition and punctuation stripping can expose
    # whitespace, so run to a fixpoint
    while cur != prev:
        prev, cur = cur, _normalize_once(cur)
    return cur


def _decode_entities(s: str) -> str:
    for ent, ch in _ENTITIES.items():
        s = s.replace(ent, ch)
    # &amp; last so "&amp;lt;" decodes one level per pass
    return s.replace("&amp;", "&")


def clean_text(text: str) -> str:
    """Strip angle-bracket markup, decode basic entities and collapse whitespace."""
    prev, cur = None, text
    while cur != prev:
        prev = cur
        cur = _TAG.sub(" ", _decode_entities(cur))
        cur = _WS.sub(" ", cur).strip()
    return cur


def contains_word(haystack: str, needle: str) -> bool:
    """True if ``needle`` occurs in ``haystack`` bounded by non-word characters."""
    if not needle:
        return False
    pattern = r"(?<!\w)" + re.escape(needle) + r"(?!\w)"
    return re.search(pattern, haystack) is not None
