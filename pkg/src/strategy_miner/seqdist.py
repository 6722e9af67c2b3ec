"""Edit distances over click-type sequences.

Each click is treated as one character. Jaro matching uses a window of
``max(floor(max_len / 2) - 1, 1)`` positions; the lower bound of 1 keeps a
single adjacent transposition inside the window for length-3 patterns.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

PREFIX_CAP = 4
PREFIX_SCALE = 0.1


@dataclass(frozen=True)
class JaroComputation:
    m: int
    t: float
    l: int
    window: int
    similarity: float


def _check(p1: Sequence, p2: Sequence) -> None:
    if len(p1) == 0 or len(p2) == 0:
        raise ValueError("patterns must be non-empty")


def match_window(len1: int, len2: int) -> int:
    return max(max(len1, len2) // 2 - 1, 1)


def jaro_details(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> JaroComputation:
    _check(p1, p2)
    n1, n2 = len(p1), len(p2)
    window = match_window(n1, n2)
    used = [False] * n2
    matched1 = []
    for i, tok in enumerate(p1):
        for j in range(max(0, i - window), min(n2, i + window + 1)):
            if not used[j] and p2[j] == tok:
                used[j] = True
                matched1.append(tok)
                break
    m = len(matched1)
    prefix = 0
    for a, b in zip(p1[:PREFIX_CAP], p2[:PREFIX_CAP]):
        if a != b:
            break
        prefix += 1
    if m == 0:
        return JaroComputation(0, 0.0, prefix, window, 0.0)
    matched2 = [tok for tok, u in zip(p2, used) if u]
    t = sum(a != b for a, b in zip(matched1, matched2)) / 2
    sim = (m / n1 + m / n2 + (m - t) / m) / 3
    return JaroComputation(m, t, prefix, window, sim)


def jaro(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> float:
    return jaro_details(p1, p2).similarity


def jaro_winkler(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> float:
    d = jaro_details(p1, p2)
    return d.similarity + d.l * PREFIX_SCALE * (1.0 - d.similarity)


def jaro_winkler_distance(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> float:
    return 1.0 - jaro_winkler(p1, p2)


def levenshtein(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> int:
    if len(p1) < len(p2):
        p1, p2 = p2, p1
    prev = list(range(len(p2) + 1))
    for i, a in enumerate(p1, start=1):
        cur = [i]
        for j, b in enumerate(p2, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(p1: Sequence[Hashable], p2: Sequence[Hashable]) -> float:
    _check(p1, p2)
    return levenshtein(p1, p2) / max(len(p1), len(p2))


def parse_tokens(text: str) -> list[str]:
    """Split ``"a,b,c"`` into tokens; a string without commas is split per character."""
    text = text.strip()
    if "," in text:
        return [t.strip() for t in text.split(",")]
    return list(text)
