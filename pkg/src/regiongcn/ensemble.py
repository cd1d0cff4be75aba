"""Consensus regionalization: co-assignment graph, k-way partition, NMI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import SpatialGraph
from .numerics import Prng
from .regions import Allocation, _connected_after_removal

# The partitioner is a deterministic function of its inputs; its internal
# randomness (restart seeding, matching order) comes from this fixed seed.
_PARTITION_SEED = 271828
_RESTARTS = 8
_REFINE_PASSES = 10


@dataclass
class SimilarityGraph:
    """Same links as the source graph, weighted by co-assignment counts.

    Weights live in [0, K]; zero-weight edges stay in the topology and
    contribute nothing to a cut.
    """

    n: int
    adjacency: sp.csr_matrix
    node_ids: tuple


def co_assignment_graph(g: SpatialGraph, schemes) -> SimilarityGraph:
    """Edge weight = number of schemes placing the two endpoints together."""
    schemes = list(schemes)
    if not schemes:
        raise ValueError("need at least one region scheme")
    for a in schemes:
        if a.n != g.n:
            raise ValueError(f"scheme covers {a.n} nodes, graph has {g.n}")
    labels = np.stack([a.labels for a in schemes])
    coo = g.adjacency.tocoo()
    w = (labels[:, coo.row] == labels[:, coo.col]).sum(axis=0).astype(np.float64)
    adjacency = sp.csr_matrix((w, (coo.row, coo.col)), shape=(g.n, g.n))
    adjacency.sort_indices()
    return SimilarityGraph(n=g.n, adjacency=adjacency, node_ids=g.node_ids)


def nmi(a: Allocation, b: Allocation) -> float:
    """Normalized mutual information between two partitions, natural log.

    Empty regions are ignored (regions are sets of nodes). When both
    partitions consist of a single region the normalizer vanishes and the
    partitions are identical, so the limit value 1 is returned.
    """
    if a.n != b.n:
        raise ValueError(f"partitions cover {a.n} and {b.n} nodes")
    n = a.n
    _, ia = np.unique(a.labels, return_inverse=True)
    _, ib = np.unique(b.labels, return_inverse=True)
    cont = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(cont, (ia, ib), 1.0)
    ai = cont.sum(axis=1)
    bj = cont.sum(axis=0)
    den = float(ai @ np.log(ai / n) + bj @ np.log(bj / n))
    if den == 0.0:
        return 1.0
    nz = cont > 0
    ratio = n * cont[nz] / np.outer(ai, bj)[nz]
    num = -2.0 * float((cont[nz] * np.log(ratio)).sum())
    # the ratio is in [0, 1] exactly; clamp float noise at the closed ends
    return min(1.0, max(0.0, num / den))


def anmi(schemes, ensemble: Allocation) -> float:
    """Mean NMI between the ensemble scheme and each member scheme."""
    schemes = list(schemes)
    if not schemes:
        raise ValueError("need at least one region scheme")
    return float(np.mean([nmi(s, ensemble) for s in schemes]))


def cut_cost(adjacency: sp.csr_matrix, labels: np.ndarray) -> float:
    """Total weight of edges whose endpoints get different labels."""
    coo = adjacency.tocoo()
    differs = labels[coo.row] != labels[coo.col]
    return float(coo.data[differs].sum()) / 2.0


# ---------------------------------------------------------------------------
# multilevel balanced k-way partitioning

def _heavy_edge_matching(adj: sp.csr_matrix, rng: Prng):
    """Greedy matching preferring heavy edges; returns fine-to-coarse ids."""
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    match = np.full(n, -1, dtype=np.int64)
    for u in rng.gen.permutation(n):
        u = int(u)
        if match[u] >= 0:
            continue
        best_v, best_w = -1, -1.0
        for k in range(indptr[u], indptr[u + 1]):
            v = int(indices[k])
            if v == u or match[v] >= 0:
                continue
            if data[k] > best_w:
                best_v, best_w = v, float(data[k])
        if best_v >= 0:
            match[u] = best_v
            match[best_v] = u
        else:
            match[u] = u
    cid = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for u in range(n):
        if cid[u] < 0:
            cid[u] = nxt
            cid[match[u]] = nxt
            nxt += 1
    return cid, nxt


def _contract(adj, node_w, cid, nc):
    coo = adj.tocoo()
    r, c = cid[coo.row], cid[coo.col]
    keep = r != c
    coarse = sp.csr_matrix((coo.data[keep], (r[keep], c[keep])), shape=(nc, nc))
    coarse.sum_duplicates()
    coarse.sort_indices()
    w = np.bincount(cid, weights=node_w, minlength=nc)
    return coarse, w


def _spread_seeds(adj, R, rng: Prng):
    """One random seed, then repeatedly the node farthest from all seeds."""
    n = adj.shape[0]
    indptr, indices = adj.indptr, adj.indices
    seeds = [int(rng.gen.integers(n))]
    dist = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)

    def relax(source):
        dist[source] = 0
        frontier = [source]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in indices[indptr[u]:indptr[u + 1]]:
                    if dist[v] > d:
                        dist[v] = d
                        nxt.append(int(v))
            frontier = nxt

    relax(seeds[0])
    while len(seeds) < R:
        far = int(np.argmax(dist))
        if dist[far] == 0:
            far = int(np.nonzero(~np.isin(np.arange(n), seeds))[0][0])
        seeds.append(far)
        relax(far)
    return seeds


def _greedy_grow(adj, node_w, R, cap, rng: Prng):
    """Balanced greedy seeding: smallest region absorbs its best neighbor."""
    n = adj.shape[0]
    if R >= n:
        return np.arange(1, n + 1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    labels = np.zeros(n, dtype=np.int64)
    conn = np.zeros((n, R))
    sizes = np.zeros(R + 1)

    def assign(v, j):
        labels[v] = j
        sizes[j] += node_w[v]
        sl = slice(indptr[v], indptr[v + 1])
        conn[indices[sl], j - 1] += data[sl]

    for j, s in enumerate(_spread_seeds(adj, R, rng), start=1):
        assign(s, j)

    unassigned = labels == 0
    while unassigned.any():
        order = sorted(range(1, R + 1), key=lambda j: (sizes[j], j))
        placed = False
        for j in order:
            fits = unassigned & (node_w <= cap - sizes[j])
            cand = np.where(fits & (conn[:, j - 1] > 0), conn[:, j - 1], -1.0)
            v = int(np.argmax(cand))
            if cand[v] > 0:
                assign(v, j)
                placed = True
                break
        if not placed:
            # wedged under the cap: give the smallest region any leftover node
            v = int(np.nonzero(unassigned)[0][0])
            assign(v, order[0])
        unassigned = labels == 0
    return labels


def _refine(adj, node_w, labels, R, cap, check_connectivity=False,
            max_passes=_REFINE_PASSES):
    """Boundary moves with strictly positive cut gain under the size cap."""
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    labels = labels.copy()
    sizes = np.bincount(labels, weights=node_w, minlength=R + 1)
    for _ in range(max_passes):
        moved = False
        for v in range(n):
            own = int(labels[v])
            sl = slice(indptr[v], indptr[v + 1])
            nb_labels = labels[indices[sl]]
            if not np.any(nb_labels != own):
                continue
            conn: dict[int, float] = {}
            for lab, w in zip(nb_labels, data[sl]):
                conn[int(lab)] = conn.get(int(lab), 0.0) + float(w)
            own_conn = conn.get(own, 0.0)
            best_gain, best_j = 0.0, own
            for j in sorted(conn):
                if j == own:
                    continue
                gain = conn[j] - own_conn
                if gain > best_gain and sizes[j] + node_w[v] <= cap:
                    best_gain, best_j = gain, j
            if best_j == own:
                continue
            if check_connectivity and not _connected_after_removal(
                    indptr, indices, labels, own, [v]):
                continue
            sizes[own] -= node_w[v]
            sizes[best_j] += node_w[v]
            labels[v] = best_j
            moved = True
        if not moved:
            break
    return labels


def _region_components(indptr, indices, labels, region):
    members = np.nonzero(labels == region)[0]
    member_set = set(int(m) for m in members)
    seen = set()
    comps = []
    for start in members:
        start = int(start)
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            u = stack.pop()
            for v in indices[indptr[u]:indptr[u + 1]]:
                v = int(v)
                if v in member_set and v not in seen:
                    seen.add(v)
                    comp.append(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def _repair_connectivity(adj, labels):
    """Merge every non-largest region fragment into its best-connected
    neighboring region, iterated to a fixed point."""
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    labels = labels.copy()
    while True:
        changed = False
        for region in sorted(set(int(r) for r in np.unique(labels))):
            comps = _region_components(indptr, indices, labels, region)
            if len(comps) <= 1:
                continue
            comps.sort(key=lambda c: (-len(c), c[0]))
            for frag in comps[1:]:
                conn: dict[int, float] = {}
                frag_set = set(frag)
                for u in frag:
                    for k in range(indptr[u], indptr[u + 1]):
                        v = int(indices[k])
                        if v in frag_set or labels[v] == region:
                            continue
                        lab = int(labels[v])
                        conn[lab] = conn.get(lab, 0.0) + float(data[k])
                if not conn:
                    continue   # fragment with no external links stays put
                target = sorted(conn.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
                labels[frag] = target
                changed = True
        if not changed:
            break
    return labels


def partition_kway_report(gs: SimilarityGraph, regions: int, balance_u: float):
    """Partition plus diagnostics (cut cost, balance, achieved regions)."""
    n = gs.n
    if not 1 <= regions <= n:
        raise ValueError(f"region count {regions} outside [1, {n}]")
    if balance_u < 0:
        raise ValueError("balance parameter must be nonnegative")
    cap = (1.0 + balance_u / 1000.0) * n / regions

    if regions == 1:
        alloc = Allocation(np.ones(n, dtype=np.int64), 1)
        diag = {"cut_cost": 0.0, "size_cap": cap, "target_regions": 1,
                "achieved_regions": 1, "max_size_before_repair": n,
                "max_size_after_repair": n}
        return alloc, diag

    rng = Prng(_PARTITION_SEED).substream("kway")
    adj = gs.adjacency.astype(np.float64)
    node_w = np.ones(n)
    levels = []
    maps = []
    while adj.shape[0] > 8 * regions:
        cid, nc = _heavy_edge_matching(adj, rng)
        if nc > 0.95 * adj.shape[0]:
            break
        levels.append((adj, node_w))
        maps.append(cid)
        adj, node_w = _contract(adj, node_w, cid, nc)

    best_labels, best_cut = None, np.inf
    for _ in range(_RESTARTS):
        labels = _greedy_grow(adj, node_w, regions, cap, rng)
        labels = _refine(adj, node_w, labels, regions, cap)
        cut = cut_cost(adj, labels)
        if cut < best_cut:
            best_cut, best_labels = cut, labels
    labels = best_labels

    for (adj_f, w_f), cid in zip(reversed(levels), reversed(maps)):
        labels = labels[cid]
        labels = _refine(adj_f, w_f, labels, regions, cap)
        adj, node_w = adj_f, w_f

    labels = _refine(gs.adjacency, np.ones(n), labels, regions, cap,
                     check_connectivity=True)
    pre_sizes = np.bincount(labels, minlength=regions + 1)[1:]
    labels = _repair_connectivity(gs.adjacency, labels)
    post_sizes = np.bincount(labels, minlength=regions + 1)[1:]

    alloc = Allocation(labels, regions)
    diag = {
        "cut_cost": cut_cost(gs.adjacency, labels),
        "size_cap": cap,
        "target_regions": regions,
        "achieved_regions": int((post_sizes > 0).sum()),
        "max_size_before_repair": int(pre_sizes.max()),
        "max_size_after_repair": int(post_sizes.max()),
    }
    return alloc, diag


def partition_kway(gs: SimilarityGraph, regions: int, balance_u: float) -> Allocation:
    """Balanced k-way partition of the similarity graph, regions connected.

    Multilevel scheme: heavy-edge coarsening, greedy balanced seeding with
    restarts, boundary refinement under the size cap, then connectivity
    repair (fragments merge into the neighbor with the strongest tie).
    Deterministic; empty regions may result from the repair step.
    """
    alloc, _ = partition_kway_report(gs, regions, balance_u)
    return alloc


def select_R(gs: SimilarityGraph, candidates, balance_u: float, schemes):
    """Partition per candidate region count, score by ANMI, pick the argmax.

    Returns (best_R, table) where table rows are dicts with the candidate,
    its ANMI, and partition diagnostics. First candidate wins ties.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate region count")
    table = []
    best_r, best_score = None, -np.inf
    for r in candidates:
        alloc, diag = partition_kway_report(gs, int(r), balance_u)
        score = anmi(schemes, alloc)
        row = {"regions": int(r), "anmi": score}
        row.update(diag)
        table.append(row)
        if score > best_score:
            best_r, best_score = int(r), score
    return best_r, table
