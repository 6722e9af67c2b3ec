"""Slow reference implementations used as test oracles."""
from collections import Counter

from strategy_miner.seqdist import jaro_winkler_distance


def ngram_oracle(token_lists, n):
    table = Counter()
    for tokens in token_lists:
        for start in range(len(tokens)):
            gram = tuple(tokens[start:start + n])
            if len(gram) == n:
                table[gram] += 1
    return table


def linkage_oracle(leaves, dist=None, eps=1e-12):
    """Exhaustive average linkage: recompute every cluster-pair mean from leaf pairs.

    Returns merges as (sorted leaf tuple a, sorted leaf tuple b, height).
    """
    if dist is None:
        dist = lambda i, j: jaro_winkler_distance(leaves[i], leaves[j])  # noqa: E731
    clusters = [[i] for i in range(len(leaves))]
    merges = []
    while len(clusters) > 1:
        scored = []
        for x in range(len(clusters)):
            for y in range(x + 1, len(clusters)):
                a, b = clusters[x], clusters[y]
                avg = sum(dist(i, j) for i in a for j in b) / (len(a) * len(b))
                key = (min(a[0], b[0]), max(a[0], b[0]))
                scored.append((avg, key, x, y))
        best = min(s[0] for s in scored)
        avg, _, x, y = min((s for s in scored if s[0] <= best + eps), key=lambda s: s[1])
        a, b = clusters[x], clusters[y]
        if b[0] < a[0]:
            a, b = b, a
        merges.append((tuple(a), tuple(b), avg))
        merged = sorted(a + b)
        clusters = [c for k, c in enumerate(clusters) if k not in (x, y)] + [merged]
        clusters.sort(key=lambda c: c[0])
    return merges


def merges_as_leaf_sets(dendro):
    members = dendro.leaf_sets()
    return [(tuple(sorted(members[a])), tuple(sorted(members[b])), h)
            for a, b, h, _ in dendro.merges]


def planted_lda_corpus(n_topics, words_per_topic, n_sessions, rng, dominant=0.95,
                       mean_len=6, concentration=0.1):
    """Sessions from an LDA generator whose topics own disjoint vocabulary blocks.

    Each topic puts ``dominant`` mass on its own block and spreads the rest
    over the whole vocabulary.
    """
    import numpy as np
    vocab = n_topics * words_per_topic
    phi = np.full((n_topics, vocab), (1 - dominant) / vocab)
    for t in range(n_topics):
        phi[t, t * words_per_topic:(t + 1) * words_per_topic] += dominant / words_per_topic
    docs = []
    for _ in range(n_sessions):
        theta = rng.dirichlet(np.full(n_topics, concentration))
        length = 1 + rng.poisson(mean_len - 1)
        zs = rng.choice(n_topics, size=length, p=theta)
        docs.append([int(rng.choice(vocab, p=phi[z])) for z in zs])
    return docs, phi


def greedy_topic_match(learned_phi, blocks):
    """Pair learned topics with planted vocab blocks by descending mass; returns block -> mass."""
    import numpy as np
    mass = np.array([[learned_phi[t, list(b)].sum() for b in blocks]
                     for t in range(learned_phi.shape[0])])
    out = {}
    used_t, used_b = set(), set()
    for flat in np.argsort(-mass, axis=None, kind="stable"):
        t, b = divmod(int(flat), len(blocks))
        if t in used_t or b in used_b:
            continue
        out[b] = float(mass[t, b])
        used_t.add(t)
        used_b.add(b)
    return out


def two_group_sessions(rng, n_sessions, group_size=6, length=6):
    """Sessions drawn uniformly inside one of two disjoint click-type groups."""
    sessions = []
    for _ in range(n_sessions):
        g = int(rng.integers(0, 2))
        sessions.append([int(x) for x in g * group_size + rng.integers(0, group_size, size=length)])
    return sessions


def group_distance_means(dist, group_size=6):
    import numpy as np
    v = dist.shape[0]
    group = np.arange(v) // group_size
    same = group[:, None] == group[None, :]
    off = ~np.eye(v, dtype=bool)
    return float(dist[same & off].mean()), float(dist[~same].mean())
