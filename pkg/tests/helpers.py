"""Shared fixtures-in-spirit: small random instances used across test modules."""

import numpy as np

from regiongcn.graph import from_edge_list
from regiongcn.numerics import Prng


def random_graph(n, extra, seed):
    """Random connected graph: a random tree plus `extra` chords."""
    rng = Prng(seed).gen
    edges = set()
    for i in range(1, n):
        edges.add((int(rng.integers(i)), i))
    while len(edges) < n - 1 + extra:
        a, b = sorted(int(v) for v in rng.integers(n, size=2))
        if a != b:
            edges.add((a, b))
    return from_edge_list(n, sorted(edges))


def region_connected(g, alloc, region):
    """True when the induced subgraph of one region is connected."""
    members = np.nonzero(alloc.labels == region)[0]
    if members.size == 0:
        return False
    sub = g.adjacency[np.ix_(members, members)]
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in sub[u].indices:
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return len(seen) == members.size
