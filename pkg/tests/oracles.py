"""Brute-force reference implementations, deliberately independent of semiqa internals.

They work from raw (src, rel, dst) triples and plain Python only.
"""
import itertools
import math


def labelled_adjacency(edges):
    """label -> {node: set(next nodes)}, with inverse traversals labelled inv___<rel>."""
    adj = {}
    for s, r, d in edges:
        adj.setdefault(r, {}).setdefault(s, set()).add(d)
        adj.setdefault("inv___" + r, {}).setdefault(d, set()).add(s)
    return adj


def brute_reach(adj, seeds, seq):
    cur = set(seeds)
    for label in seq:
        table = adj.get(label, {})
        cur = {v for u in cur for v in table.get(u, ())}
    return cur


def brute_shortest_paths(edges, seeds, target, max_len=3):
    """Enumerate every label sequence up to max_len; keep the shortest that reach target."""
    if target in seeds:
        return set()
    adj = labelled_adjacency(edges)
    labels = sorted(adj)
    for length in range(1, max_len + 1):
        hits = {seq for seq in itertools.product(labels, repeat=length) if target in brute_reach(adj, seeds, seq)}
        if hits:
            return hits
    return set()


def brute_hit1(pred, gold):
    return 1 if len(pred) > 0 and pred[0] in set(gold) else 0


def brute_rr(pred, gold):
    ranks = [i + 1 for i, p in enumerate(pred) if p in set(gold)]
    return 1.0 / min(ranks) if ranks else 0.0


def brute_f1(pred, gold):
    pred, gold = set(pred), set(gold)
    tp = sum(1 for p in pred if p in gold)
    if tp == 0:
        return 0.0
    return 2 * tp / (len(pred) + len(gold))


def brute_cosine_ranking(query, vectors):
    """[(id, cosine)] sorted by cosine desc then id asc, computed with math only."""
    def norm(v):
        return math.sqrt(sum(x * x for x in v))

    qn = norm(query)
    scored = []
    for nid, v in vectors.items():
        vn = norm(v)
        cos = 0.0 if qn == 0 or vn == 0 else sum(a * b for a, b in zip(query, v)) / (qn * vn)
        scored.append((nid, round(cos, 12)))  # scores equal to 12 places count as ties
    return sorted(scored, key=lambda kv: (-kv[1], kv[0]))
