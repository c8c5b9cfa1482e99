"""Independent reference implementations used to cross-check the package.

These deliberately avoid the package's own helpers (apart from ``normalize``,
whose contract is tested separately) and favour plain loops over speed.
"""

import math
import unicodedata
from fractions import Fraction


# --- pHash ---------------------------------------------------------------------

def luma_rows(rgb):
    """rgb: nested lists [row][col][3] of floats -> luma rows."""
    return [[0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] for p in row] for row in rgb]


def block_mean(plane, size=32):
    """Area-average a plane whose sides are integer multiples of ``size``."""
    h, w = len(plane), len(plane[0])
    fy, fx = h // size, w // size
    assert fy * size == h and fx * size == w
    out = []
    for i in range(size):
        row = []
        for j in range(size):
            s = 0.0
            for y in range(i * fy, (i + 1) * fy):
                for x in range(j * fx, (j + 1) * fx):
                    s += plane[y][x]
            row.append(s / (fy * fx))
        out.append(row)
    return out


def phash_bits(plane):
    """Direct 2-D DCT-II of a 32x32 plane, 8x8 low block, AC bits vs their median."""
    n = len(plane)
    coeffs = []
    for u in range(8):
        for v in range(8):
            s = 0.0
            for x in range(n):
                cu = math.cos(math.pi * u * (2 * x + 1) / (2 * n))
                for y in range(n):
                    s += cu * math.cos(math.pi * v * (2 * y + 1) / (2 * n)) * plane[x][y]
            coeffs.append(s)
    ac = coeffs[1:]
    srt = sorted(ac)
    median = srt[len(srt) // 2]
    return [1 if c > median else 0 for c in ac] + [0]


# --- geometry ------------------------------------------------------------------

def union_box(boxes):
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


def square_fits(side, u, w, h):
    """Is there an axis-aligned integer square of ``side`` inside w x h containing u?"""
    if side <= 0 or side > w or side > h:
        return False
    for x0 in range(0, w - side + 1):
        if not (x0 <= u[0] and x0 + side >= u[2]):
            continue
        for y0 in range(0, h - side + 1):
            if y0 <= u[1] and y0 + side >= u[3]:
                return True
    return False


def touches(a, b, gap):
    ga = gap / 2
    return (a[0] - ga <= b[2] + ga and b[0] - ga <= a[2] + ga
            and a[1] - ga <= b[3] + ga and b[1] - ga <= a[3] + ga)


# --- item intelligence -----------------------------------------------------------

def _norm(s):
    s = unicodedata.normalize("NFC", str(s)).lower()
    s = " ".join(s.split())
    while s and unicodedata.category(s[0]).startswith("P"):
        s = s[1:].lstrip()
    while s and unicodedata.category(s[-1]).startswith("P"):
        s = s[:-1].rstrip()
    return s


def item_intel_scores(items):
    """items: list of (gold mapping, predicted mapping).

    Returns exact (macro_p, macro_r, macro_f1, vc, vi, uv) by direct comparison.
    """
    ps, rs, fs = [], [], []
    counts = {"vc": 0, "vi": 0, "uv": 0}
    for gold, pred in items:
        gold_n = {}
        for k, v in gold.items():
            gold_n.setdefault(_norm(k), (k, v))
        correct, recovered = 0, set()
        for k, v in pred.items():
            hit = gold_n.get(_norm(k))
            if hit is None:
                counts["uv"] += 1
            elif _norm(hit[1]) == _norm(v):
                counts["vc"] += 1
                correct += 1
                recovered.add(hit[0])
            else:
                counts["vi"] += 1
        p = Fraction(correct, len(pred)) if pred else Fraction(0)
        r = Fraction(len(recovered), len(gold)) if gold else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        ps.append(p)
        rs.append(r)
        fs.append(f)
    n = len(items)
    total = sum(counts.values())
    frac = {k: Fraction(c, total) if total else Fraction(0) for k, c in counts.items()}
    return (sum(ps) / n, sum(rs) / n, sum(fs) / n, frac["vc"], frac["vi"], frac["uv"])


# --- mix allocation ----------------------------------------------------------------

def largest_remainder(total, fractions):
    """Hare quota apportionment, ties to the lower index."""
    quotas = [Fraction(total) * Fraction(f) for f in fractions]
    base = [math.floor(q) for q in quotas]
    left = total - sum(base)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base
