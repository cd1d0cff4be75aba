"""Spatial graph construction and the propagation operators built from it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .numerics import SparseRowMatrix


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected spatial graph over n units.

    The adjacency is symmetric CSR with a zero diagonal; weights are strictly
    positive. Treated as immutable after construction.
    """

    n: int
    adjacency: SparseRowMatrix
    weighted: bool
    node_ids: tuple[str, ...]

    def degrees(self) -> np.ndarray:
        """Weighted degree of every node."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Undirected edges as (i, j, w) with i < j, sorted."""
        coo = self.adjacency.tocoo()
        out = [(int(i), int(j), float(w))
               for i, j, w in zip(coo.row, coo.col, coo.data) if i < j]
        out.sort()
        return out


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(n))


def from_edge_list(n: int, edges, node_ids=None) -> SpatialGraph:
    """Build a SpatialGraph from undirected edges (src, dst[, weight]).

    Rejects self-loops, duplicate undirected pairs, out-of-range indices and
    non-positive weights. Edges without a weight get weight 1.
    """
    if n < 1:
        raise ValueError("graph needs at least one node")
    node_ids = _default_ids(n) if node_ids is None else tuple(str(s) for s in node_ids)
    if len(node_ids) != n:
        raise ValueError(f"{len(node_ids)} node ids for {n} nodes")
    if len(set(node_ids)) != n:
        raise ValueError("node ids are not unique")

    seen = set()
    rows, cols, vals = [], [], []
    weighted = False
    for edge in edges:
        if len(edge) == 3:
            s, d, w = edge
            w = float(w)
            weighted = True
        else:
            s, d = edge
            w = 1.0
        s, d = int(s), int(d)
        if not (0 <= s < n and 0 <= d < n):
            raise ValueError(f"edge ({s}, {d}) out of range for n={n}")
        if s == d:
            raise ValueError(f"self-loop at node {s}")
        key = (min(s, d), max(s, d))
        if key in seen:
            raise ValueError(f"duplicate undirected pair ({s}, {d})")
        seen.add(key)
        if w <= 0 or not np.isfinite(w):
            raise ValueError(f"edge ({s}, {d}) has non-positive weight {w}")
        rows += [s, d]
        cols += [d, s]
        vals += [w, w]

    adjacency = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64),
         (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(n, n))
    adjacency.sort_indices()
    return SpatialGraph(n=n, adjacency=adjacency, weighted=weighted,
                        node_ids=node_ids)


def row_normalize(g: SpatialGraph) -> SparseRowMatrix:
    """Adjacency with each row divided by its (weighted) degree.

    Every row of the result sums to 1; average-pools neighbor values.
    """
    deg = g.degrees()
    dead = np.nonzero(deg <= 0)[0]
    if dead.size:
        i = int(dead[0])
        raise ValueError(f"isolated node {g.node_ids[i]!r} (index {i}) has degree 0")
    out = sp.diags(1.0 / deg) @ g.adjacency
    out = out.tocsr()
    out.sort_indices()
    return out


def renormalized_laplacian(g: SpatialGraph) -> SparseRowMatrix:
    """Symmetric propagation operator from the self-loop-augmented adjacency.

    Adds the identity to the adjacency, then scales both sides by the inverse
    square root of the augmented degree. Spectral radius is at most 1.
    """
    at = (g.adjacency + sp.eye(g.n, format="csr")).tocsr()
    dt = np.asarray(at.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(dt)
    out = (sp.diags(inv_sqrt) @ at @ sp.diags(inv_sqrt)).tocsr()
    out.sort_indices()
    return out


def connected_components(g: SpatialGraph) -> np.ndarray:
    """Component label per node; nodes share a label iff connected."""
    _, labels = csgraph.connected_components(g.adjacency, directed=False)
    return labels.astype(np.int64)


def symmetrize_flows(n: int, edges, node_ids=None) -> SpatialGraph:
    """Build an undirected graph from directed flows (src, dst, weight).

    The undirected weight is the mean of the two directed volumes, a missing
    direction counting as 0. Zero-result edges are dropped. Parallel directed
    records accumulate; self-flows carry no between-node information and are
    ignored.
    """
    flows: dict[tuple[int, int], float] = {}
    for s, d, w in edges:
        s, d, w = int(s), int(d), float(w)
        if not (0 <= s < n and 0 <= d < n):
            raise ValueError(f"flow ({s}, {d}) out of range for n={n}")
        if w < 0 or not np.isfinite(w):
            raise ValueError(f"flow ({s}, {d}) has negative weight {w}")
        if s == d:
            continue
        flows[(s, d)] = flows.get((s, d), 0.0) + w

    sym: dict[tuple[int, int], float] = {}
    for (s, d), w in flows.items():
        key = (min(s, d), max(s, d))
        if key not in sym:
            rev = flows.get((d, s), 0.0)
            sym[key] = (w + rev) / 2.0
    out_edges = [(i, j, w) for (i, j), w in sorted(sym.items()) if w > 0]
    return from_edge_list(n, out_edges, node_ids=node_ids)
