"""Clustered n-gram strategy mining.

Frequent n-grams of several lengths are pooled, grouped by average-linkage
agglomerative clustering under Jaro-Winkler distance, and each group is
summarised by click-type shares and a 3-click representative.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .seqdist import jaro_winkler_distance

Pattern = tuple[int, ...]

# Linkage distances closer than this are treated as ties.
TIE_EPS = 1e-12


def as_token_lists(sessions) -> list[list[int]]:
    out = []
    for s in sessions:
        tokens = getattr(s, "tokens", s)
        out.append([int(t) for t in tokens])
    return out


def extract_ngrams(sessions, n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    table: Counter = Counter()
    for tokens in as_token_lists(sessions):
        for i in range(len(tokens) - n + 1):
            table[tuple(tokens[i:i + n])] += 1
    return table


def extract_ngram_tables(sessions, ns: Iterable[int] = (3, 4, 5)) -> dict[int, Counter]:
    token_lists = as_token_lists(sessions)
    return {n: extract_ngrams(token_lists, n) for n in ns}


def select_candidates(tables: dict[int, Counter] | Counter, share: float = 0.01
                      ) -> list[Pattern]:
    """Top ``ceil(share * distinct)`` patterns per length; ties go to the smaller pattern."""
    if not 0 < share <= 1:
        raise ValueError("share must lie in (0, 1]")
    if isinstance(tables, Counter):
        by_len: dict[int, Counter] = {}
        for p, c in tables.items():
            by_len.setdefault(len(p), Counter())[p] = c
        tables = by_len
    out: list[Pattern] = []
    for n in sorted(tables):
        table = tables[n]
        if not table:
            continue
        keep = math.ceil(share * len(table))
        ranked = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
        out.extend(p for p, _ in ranked[:keep])
    return out


def canonical_order(patterns: Iterable[Pattern]) -> list[Pattern]:
    return sorted(set(tuple(p) for p in patterns), key=lambda p: (len(p), p))


def pairwise_distances(patterns: Sequence[Pattern]) -> np.ndarray:
    n = len(patterns)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = jaro_winkler_distance(patterns[i], patterns[j])
    return d


@dataclass
class Dendrogram:
    """Leaves plus merge list in scipy convention (new cluster ids start at len(leaves))."""
    leaves: list[Pattern]
    merges: list[tuple[int, int, float, int]]
    counts: dict[Pattern, int] = field(default_factory=dict)

    def leaf_sets(self) -> dict[int, list[int]]:
        members = {i: [i] for i in range(len(self.leaves))}
        for step, (a, b, _, _) in enumerate(self.merges):
            members[len(self.leaves) + step] = members[a] + members[b]
        return members


def agglomerative_cluster(candidates: Sequence[Pattern], counts: dict | None = None,
                          distances: np.ndarray | None = None) -> Dendrogram:
    """Average-linkage clustering under 1 - Jaro-Winkler.

    Leaves are put in canonical (length, tokens) order first, so the result
    does not depend on the order of ``candidates``. Among tied pairs the one
    with the smallest (min leaf index, other min leaf index) wins.
    """
    leaves = canonical_order(candidates)
    n = len(leaves)
    if n < 2:
        raise ValueError("need at least 2 distinct candidate patterns")
    if distances is None:
        distances = pairwise_distances(leaves)
    # cluster-pair distance sums; average = sum / (size_a * size_b)
    sums = distances.astype(float).copy()
    active = list(range(n))
    ids = list(range(n))
    sizes = [1] * n
    first_leaf = list(range(n))
    merges = []
    for step in range(n - 1):
        act = np.asarray(active)
        sz = np.asarray([sizes[i] for i in active], dtype=float)
        avg_mat = sums[np.ix_(act, act)] / np.outer(sz, sz)
        iu, ju = np.triu_indices(len(act), k=1)
        avgs = avg_mat[iu, ju]
        tied = np.flatnonzero(avgs <= avgs.min() + TIE_EPS)
        fl = np.asarray([first_leaf[i] for i in active])
        lo = np.minimum(fl[iu[tied]], fl[ju[tied]])
        hi = np.maximum(fl[iu[tied]], fl[ju[tied]])
        pick = tied[np.lexsort((hi, lo))[0]]
        a, b = active[iu[pick]], active[ju[pick]]
        avg = avgs[pick]
        if first_leaf[b] < first_leaf[a]:
            a, b = b, a
        merges.append((ids[a], ids[b], float(avg), sizes[a] + sizes[b]))
        # slot a becomes the merged cluster
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        sizes[a] += sizes[b]
        first_leaf[a] = min(first_leaf[a], first_leaf[b])
        ids[a] = n + step
        active.remove(b)
    counts = {p: int((counts or {}).get(p, 1)) for p in leaves}
    return Dendrogram(leaves, merges, counts)


@dataclass
class StrategyCluster:
    members: list[Pattern]
    click_type_shares: dict[int, float]
    representative: Pattern
    label: str = ""

    def to_json(self) -> dict:
        return dict(label=self.label,
                    representative=list(self.representative),
                    members=[list(p) for p in self.members],
                    click_type_shares={str(k): v for k, v in self.click_type_shares.items()})

    @classmethod
    def from_json(cls, row: dict) -> "StrategyCluster":
        return cls([tuple(p) for p in row["members"]],
                   {int(k): float(v) for k, v in row["click_type_shares"].items()},
                   tuple(row["representative"]), row.get("label", ""))


def cluster_shares(members: Sequence[Pattern], counts: dict[Pattern, int]) -> dict[int, float]:
    tally: Counter = Counter()
    for p in members:
        w = counts.get(p, 1)
        for tok in p:
            tally[tok] += w
    total = sum(tally.values())
    return {tok: tally[tok] / total for tok in sorted(tally, key=lambda t: (-tally[t], t))}


def representative_pattern(members: Sequence[Pattern], counts: dict[Pattern, int]) -> Pattern:
    """Most frequent 3-click member, else the first 3 clicks of the most frequent member."""
    def rank(p):
        return (-counts.get(p, 1), p)
    threes = [p for p in members if len(p) == 3]
    if threes:
        return min(threes, key=rank)
    top = min(members, key=rank)
    if len(top) < 3:
        raise ValueError(f"cannot derive a 3-click representative from {top}")
    return tuple(top[:3])


def cut_dendrogram(dendrogram: Dendrogram, k: int,
                   labels: Sequence[str] | None = None) -> list[StrategyCluster]:
    n = len(dendrogram.leaves)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    members = dendrogram.leaf_sets()
    for a, b, _, _ in dendrogram.merges[:n - k]:
        ra, rb = find(members[a][0]), find(members[b][0])
        parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    out = []
    for ci, root in enumerate(sorted(groups)):
        pats = [dendrogram.leaves[i] for i in groups[root]]
        label = labels[ci] if labels is not None and ci < len(labels) else f"strategy {ci}"
        out.append(StrategyCluster(pats, cluster_shares(pats, dendrogram.counts),
                                   representative_pattern(pats, dendrogram.counts), label))
    return out


def export_dendrogram(dendrogram: Dendrogram) -> dict:
    """Nested ``{left, right, height}`` tree; leaves carry tokens and corpus count."""
    n = len(dendrogram.leaves)
    nodes: dict[int, dict] = {
        i: dict(leaf=i, tokens=list(p), count=dendrogram.counts.get(p, 1))
        for i, p in enumerate(dendrogram.leaves)}
    for step, (a, b, h, _) in enumerate(dendrogram.merges):
        nodes[n + step] = dict(left=nodes.pop(a), right=nodes.pop(b), height=h, step=step)
    (root,) = nodes.values()
    return root


def import_dendrogram(tree: dict) -> Dendrogram:
    leaves: dict[int, Pattern] = {}
    counts: dict[Pattern, int] = {}
    internal: dict[int, tuple] = {}

    def walk(node) -> tuple[int, int]:
        if "leaf" in node:
            p = tuple(node["tokens"])
            leaves[node["leaf"]] = p
            counts[p] = int(node.get("count", 1))
            return node["leaf"], 1
        a, sa = walk(node["left"])
        b, sb = walk(node["right"])
        internal[node["step"]] = (a, b, node["height"], sa + sb)
        return ("step", node["step"]), sa + sb

    walk(tree)
    n = len(leaves)
    merges = []
    for step in range(len(internal)):
        a, b, h, size = internal[step]
        a = a if isinstance(a, int) else n + a[1]
        b = b if isinstance(b, int) else n + b[1]
        merges.append((a, b, float(h), size))
    return Dendrogram([leaves[i] for i in range(n)], merges, counts)


def mine_strategies(sessions, ns=(3, 4, 5), share: float = 0.01, k: int = 9,
                    labels: Sequence[str] | None = None):
    """Full pipeline: n-grams -> candidates -> dendrogram -> k clusters."""
    tables = extract_ngram_tables(sessions, ns)
    candidates = select_candidates(tables, share)
    counts = {}
    for table in tables.values():
        counts.update(table)
    dendro = agglomerative_cluster(candidates, counts)
    k = min(k, len(dendro.leaves))
    return cut_dendrogram(dendro, k, labels), dendro
