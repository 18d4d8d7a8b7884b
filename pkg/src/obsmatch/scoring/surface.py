"""Character-level scores: Levenshtein similarity, digits match, acronyms."""

from __future__ import annotations

import re
from collections.abc import Iterable
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal, localcontext

from obsmatch.model import Entity
from obsmatch.scoring.text import entity_texts, stopwords, tokenize

__all__ = [
    "acronym_probability",
    "digits_match",
    "extract_numbers",
    "lcs_length",
    "levenshtein_distance",
    "levenshtein_similarity",
    "numbers_match",
    "pair_acronym",
    "pair_levenshtein",
]


def levenshtein_distance(s1: str, s2: str) -> int:
    if s1 == s2:
        return 0
    # common prefix/suffix never costs anything
    start = 0
    while start < len(s1) and start < len(s2) and s1[start] == s2[start]:
        start += 1
    end1, end2 = len(s1), len(s2)
    while end1 > start and end2 > start and s1[end1 - 1] == s2[end2 - 1]:
        end1 -= 1
        end2 -= 1
    s1, s2 = s1[start:end1], s2[start:end2]
    if len(s1) < len(s2):
        s1, s2 = s2, s1
    if not s2:
        return len(s1)
    prev = list(range(len(s2) + 1))
    for i, c1 in enumerate(s1, 1):
        cur = [i]
        append = cur.append
        for j, c2 in enumerate(s2, 1):
            sub = prev[j - 1] + (c1 != c2)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            append(sub if sub < ins and sub < dele else (ins if ins < dele else dele))
        prev = cur
    return prev[-1]


def levenshtein_similarity(s1: str, s2: str) -> float:
    """``1 - distance / max(len)`` on case-folded strings; two empty strings score 1."""
    s1, s2 = s1.casefold(), s2.casefold()
    longest = max(len(s1), len(s2))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(s1, s2) / longest


def _pool(x: Entity | Iterable[str] | str) -> list[str]:
    if isinstance(x, Entity):
        return sorted(x.labels)
    if isinstance(x, str):
        return [x]
    return sorted(x)


def pair_levenshtein(left: Entity | Iterable[str], right: Entity | Iterable[str]) -> float:
    """Best Levenshtein similarity over the two label pools."""
    a, b = _pool(left), _pool(right)
    if not a or not b:
        return 0.0
    best = 0.0
    for x in a:
        for y in b:
            s = levenshtein_similarity(x, y)
            if s > best:
                best = s
                if best == 1.0:
                    return best
    return best


# --- digits -------------------------------------------------------------------

_NUMBER = re.compile(r"\d+(?:\.\d+)?")


def extract_numbers(texts: Iterable[str]) -> list[str]:
    return [m.group(0) for t in texts for m in _NUMBER.finditer(t)]


def _decimals(x: str) -> int:
    return len(x.split(".", 1)[1]) if "." in x else 0


def numbers_match(x: str, y: str) -> bool:
    """Equal at two decimals, or one is a (decimal) truncation of the other."""
    with localcontext() as ctx:
        ctx.prec = max(len(x), len(y)) + 4
        q = Decimal("0.01")
        if Decimal(x).quantize(q, ROUND_HALF_UP) == Decimal(y).quantize(q, ROUND_HALF_UP):
            return True
        short, long_ = (x, y) if _decimals(x) <= _decimals(y) else (y, x)
        places = _decimals(short)
        if places == 0 or places == _decimals(long_):
            return False
        return Decimal(long_).quantize(Decimal(1).scaleb(-places), ROUND_DOWN) == Decimal(short)


def _max_matching(a: list[str], b: list[str]) -> int:
    adj = [[j for j, y in enumerate(b) if numbers_match(x, y)] for x in a]
    owner: list[int | None] = [None] * len(b)

    def augment(i: int, seen: set[int]) -> bool:
        for j in adj[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] is None or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(a)))


def digits_match(left: Entity | Iterable[str], right: Entity | Iterable[str]) -> float | None:
    """Share of numbers matched between two entities' texts.

    Numbers are paired one-to-one (maximum matching); the ratio is taken over
    the larger multiset. ``None`` when either side has no numbers.
    """
    a = extract_numbers(entity_texts(left) if isinstance(left, Entity) else left)
    b = extract_numbers(entity_texts(right) if isinstance(right, Entity) else right)
    if not a or not b:
        return None
    return _max_matching(a, b) / max(len(a), len(b))


# --- acronyms -----------------------------------------------------------------

_ACRONYM = re.compile(r"[^\W\d_]{2,10}")


def lcs_length(a: str, b: str) -> int:
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _initials(label: str) -> str | None:
    stop = stopwords()
    words = [t for t in tokenize(label) if t not in stop]
    if len(words) < 2:
        return None
    return "".join(w[0] for w in words).upper()


def acronym_probability(a: str, b: str) -> float:
    """How well one label reads as the acronym of the other.

    The short side must be a single 2-10 letter token; it is compared to the
    initials of the long side's non-stop-words by longest common subsequence.
    """
    best = 0.0
    for short, long_ in ((a.strip(), b), (b.strip(), a)):
        if not _ACRONYM.fullmatch(short):
            continue
        initials = _initials(long_)
        if not initials:
            continue
        best = max(best, lcs_length(short.upper(), initials) / len(short))
    return best


def pair_acronym(left: Entity | Iterable[str], right: Entity | Iterable[str]) -> float:
    best = 0.0
    for x in _pool(left):
        for y in _pool(right):
            best = max(best, acronym_probability(x, y))
            if best == 1.0:
                return best
    return best
