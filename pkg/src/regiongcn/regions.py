"""Region schemes: growth initialization, boundary moves, k-means clusters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SpatialGraph, connected_components
from .numerics import Prng, as_dense


@dataclass
class Allocation:
    """Assignment of n nodes to p regions; labels are 1-based in [1, p]."""

    labels: np.ndarray
    p: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be a vector")
        if self.p < 1:
            raise ValueError("region count must be at least 1")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.p):
            raise ValueError(f"labels outside [1, {self.p}]")

    @property
    def n(self) -> int:
        return self.labels.size

    def copy(self) -> "Allocation":
        return Allocation(self.labels.copy(), self.p)

    def zero_based(self) -> np.ndarray:
        return self.labels - 1

    def region_sizes(self) -> np.ndarray:
        """Node count per region, length p (empty regions count 0)."""
        return np.bincount(self.labels, minlength=self.p + 1)[1:]


def grow_regions(g: SpatialGraph, p: int, rng: Prng) -> Allocation:
    """Random region growth: p uniform seeds, then round-robin expansion.

    Each round, regions take turns in index order and absorb every currently
    unassigned node adjacent to them, until the whole graph is covered. All
    regions come out connected and nonempty. Requires a connected graph.
    """
    if not 1 <= p <= g.n:
        raise ValueError(f"region count {p} outside [1, {g.n}]")
    if connected_components(g).max() != 0:
        raise ValueError("grow_regions requires a connected graph")

    labels = np.zeros(g.n, dtype=np.int64)
    seeds = rng.gen.choice(g.n, size=p, replace=False)
    labels[seeds] = np.arange(1, p + 1)

    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    remaining = g.n - p
    while remaining > 0:
        grabbed = 0
        for j in range(1, p + 1):
            members = np.nonzero(labels == j)[0]
            if members.size == 0:
                continue
            nbrs = np.concatenate(
                [indices[indptr[i]:indptr[i + 1]] for i in members])
            frontier = np.unique(nbrs[labels[nbrs] == 0])
            labels[frontier] = j
            grabbed += frontier.size
        if grabbed == 0:
            raise RuntimeError("region growth stalled on a disconnected graph")
        remaining -= grabbed
    return Allocation(labels, p)


def boundary_nodes(g: SpatialGraph, alloc: Allocation) -> np.ndarray:
    """Indices of nodes with at least one neighbor in a different region."""
    a = g.adjacency
    lab = alloc.labels
    row_of = np.repeat(np.arange(g.n), np.diff(a.indptr))
    differs = lab[a.indices] != lab[row_of]
    return np.unique(row_of[differs])


def _connected_after_removal(indptr, indices, labels, region, removed) -> bool:
    """True if the region stays connected (or empties) once `removed` leaves."""
    removed = set(int(r) for r in removed)
    rest = [i for i in np.nonzero(labels == region)[0] if int(i) not in removed]
    if len(rest) <= 1:
        return True
    rest_set = set(rest)
    stack = [rest[0]]
    seen = {rest[0]}
    while stack:
        i = stack.pop()
        for k in indices[indptr[i]:indptr[i + 1]]:
            k = int(k)
            if k in rest_set and k not in seen:
                seen.add(k)
                stack.append(k)
    return len(seen) == len(rest)


def optimize_allocation(loss_eval, g: SpatialGraph, alloc: Allocation,
                        contiguous: bool = False, on_move=None) -> Allocation:
    """Greedy boundary reallocation minimizing `loss_eval`.

    Sweeps nodes in index order; every flagged boundary node is tried in each
    neighboring region and moved to the strict loss minimizer. A move re-flags
    the neighbors of the moved nodes; nodes flagged mid-sweep are picked up in
    the next sweep. Flag-driven sweeps are a pruning device: once they go
    quiet, a full sweep over all nodes confirms that no move is left (the
    flags track 1-hop effects, while a move can shift losses over the model's
    full receptive field). Termination is guaranteed since every accepted
    move strictly lowers the loss over a finite space.

    With `contiguous`, moves that would disconnect the source region are
    skipped, and a node with a single-neighbor dependent in its own region
    drags the dependent along. Parameters behind `loss_eval` must be frozen.

    If `loss_eval` has a `rebase` method it is called with the updated
    allocation after every committed move, letting cached evaluators keep
    their reference state on the current allocation.

    `on_move(node, old_region, new_region, loss_before, loss_after)` is called
    for every accepted move.
    """
    labels = alloc.labels.copy()
    p = alloc.p
    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    degree = np.diff(indptr)
    need_check = np.ones(g.n, dtype=bool)
    rebase = getattr(loss_eval, "rebase", None)

    full_pass = False
    while True:
        check_now = np.ones(g.n, dtype=bool) if full_pass else need_check.copy()
        moved_any = False
        for i in range(g.n):
            if not check_now[i]:
                continue
            nb = indices[indptr[i]:indptr[i + 1]]
            nb_labels = labels[nb]
            own = int(labels[i])
            if not np.any(nb_labels != own):
                continue
            candidates = []
            for lab in nb_labels:
                lab = int(lab)
                if lab != own and lab not in candidates:
                    candidates.append(lab)

            move_set = [i]
            if contiguous:
                deps = [int(e) for e in nb
                        if degree[e] == 1 and labels[e] == own]
                move_set = [i] + deps
                if not _connected_after_removal(indptr, indices, labels, own,
                                                move_set):
                    need_check[i] = False
                    continue

            loss_before = loss_eval(Allocation(labels.copy(), p))
            best_loss, best_region = loss_before, own
            for j in candidates:
                cand = labels.copy()
                cand[move_set] = j
                loss = loss_eval(Allocation(cand, p))
                if loss < best_loss:
                    best_loss, best_region = loss, j
            need_check[i] = False
            if best_region != own:
                labels[move_set] = best_region
                moved_any = True
                for node in move_set:
                    need_check[indices[indptr[node]:indptr[node + 1]]] = True
                if rebase is not None:
                    rebase(Allocation(labels.copy(), p))
                if on_move is not None:
                    on_move(i, own, best_region, loss_before, best_loss)
        if moved_any:
            full_pass = False
        elif full_pass:
            break
        else:
            full_pass = True
    return Allocation(labels, p)


def kmeans_allocate(features, p: int, rng: Prng,
                    max_iter: int = 300, tol: float = 1e-6) -> Allocation:
    """Lloyd's algorithm with k-means++ seeding over feature rows.

    Labels are clusters, not necessarily spatially connected. Callers pass
    already-standardized features; nothing is rescaled here.
    """
    x = as_dense(features)
    if x.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    n = x.shape[0]
    if not 1 <= p <= n:
        raise ValueError(f"cluster count {p} outside [1, {n}]")

    # k-means++ seeding
    centroids = np.empty((p, x.shape[1]))
    first = int(rng.gen.integers(n))
    centroids[0] = x[first]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for k in range(1, p):
        total = d2.sum()
        if total > 0:
            idx = int(rng.gen.choice(n, p=d2 / total))
        else:
            idx = int(rng.gen.choice(np.nonzero(d2 == 0)[0]))
        centroids[k] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[k]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = (np.sum(x * x, axis=1)[:, None]
                 - 2.0 * x @ centroids.T
                 + np.sum(centroids * centroids, axis=1)[None, :])
        labels = np.argmin(dists, axis=1)
        new_centroids = centroids.copy()
        for k in range(p):
            members = labels == k
            if members.any():
                new_centroids[k] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-served point
                far = int(np.argmax(np.min(dists, axis=1)))
                new_centroids[k] = x[far]
        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        if shift <= tol:
            break
    dists = (np.sum(x * x, axis=1)[:, None]
             - 2.0 * x @ centroids.T
             + np.sum(centroids * centroids, axis=1)[None, :])
    labels = np.argmin(dists, axis=1)
    return Allocation(labels + 1, p)
