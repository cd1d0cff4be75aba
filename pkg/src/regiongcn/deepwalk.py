"""Random-walk node embeddings (skip-gram with negative sampling)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .graph import SpatialGraph
from .numerics import Prng


@dataclass
class WalkCorpus:
    """Unbiased random walks; every consecutive pair is a graph edge."""

    walks: np.ndarray        # (num_walks, walk_length), node indices
    walk_length: int
    walks_per_node: int


@dataclass
class EmbeddingTable:
    vectors: np.ndarray      # (n, d)

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]


def sample_walks(g: SpatialGraph, walk_length: int = 20,
                 walks_per_node: int = 20, rng: Prng | None = None) -> WalkCorpus:
    """Start `walks_per_node` walks at every node; steps are uniform over
    neighbors, ignoring edge weights. Walks from different start nodes use
    independent sub-streams."""
    if rng is None:
        rng = Prng(0)
    deg = np.diff(g.adjacency.indptr)
    dead = np.nonzero(deg == 0)[0]
    if dead.size:
        i = int(dead[0])
        raise ValueError(f"isolated node {g.node_ids[i]!r} (index {i}) "
                         "cannot start a walk")
    indptr, indices = g.adjacency.indptr, g.adjacency.indices

    walks = np.empty((g.n * walks_per_node, walk_length), dtype=np.int64)
    row = 0
    for node in range(g.n):
        node_rng = rng.substream(f"walks/{node}")
        steps = node_rng.gen.random((walks_per_node, walk_length - 1))
        cur = np.full(walks_per_node, node, dtype=np.int64)
        walks[row:row + walks_per_node, 0] = cur
        for t in range(1, walk_length):
            offs = indptr[cur]
            counts = indptr[cur + 1] - offs
            pick = (steps[:, t - 1] * counts).astype(np.int64)
            cur = indices[offs + pick]
            walks[row:row + walks_per_node, t] = cur
        row += walks_per_node
    return WalkCorpus(walks=walks, walk_length=walk_length,
                      walks_per_node=walks_per_node)


def _context_pairs(walks: np.ndarray, context_size: int):
    """All (center, context) pairs within `context_size` positions."""
    length = walks.shape[1]
    centers, contexts = [], []
    for off in range(1, context_size + 1):
        if off >= length:
            break
        left = walks[:, :-off].ravel()
        right = walks[:, off:].ravel()
        centers.append(left)
        contexts.append(right)
        centers.append(right)
        contexts.append(left)
    return np.concatenate(centers), np.concatenate(contexts)


class _SparseAdam:
    """Adam whose moments and updates touch only the rows seen in a step."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self, table, rows, grad_rows):
        self.t += 1
        self.m[rows] = self.beta1 * self.m[rows] + (1 - self.beta1) * grad_rows
        self.v[rows] = self.beta2 * self.v[rows] + (1 - self.beta2) * grad_rows ** 2
        m_hat = self.m[rows] / (1 - self.beta1 ** self.t)
        v_hat = self.v[rows] / (1 - self.beta2 ** self.t)
        table[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_embeddings(corpus: WalkCorpus, n: int, dims: int = 14,
                     context_size: int = 10, negatives: int = 5,
                     epochs: int = 100, learning_rate: float = 0.01,
                     rng: Prng | None = None, batch_size: int = 2048):
    """Skip-gram with negative sampling over the walk corpus.

    Negative nodes come from the unigram distribution raised to 0.75.
    Returns (EmbeddingTable, per-epoch mean losses).
    """
    if corpus.walks.size == 0:
        raise ValueError("empty walk corpus")
    if rng is None:
        rng = Prng(0)
    centers, contexts = _context_pairs(corpus.walks, context_size)
    counts = np.bincount(corpus.walks.ravel(), minlength=n).astype(np.float64)
    noise = counts ** 0.75
    noise /= noise.sum()

    init_rng = rng.substream("emb-init")
    w_in = (init_rng.gen.random((n, dims)) - 0.5) / dims
    w_out = np.zeros((n, dims))
    opt_in = _SparseAdam((n, dims), learning_rate)
    opt_out = _SparseAdam((n, dims), learning_rate)

    order_rng = rng.substream("emb-order")
    neg_rng = rng.substream("emb-negatives")
    epoch_losses = []
    for _ in range(epochs):
        perm = order_rng.gen.permutation(centers.size)
        losses = []
        for start in range(0, centers.size, batch_size):
            idx = perm[start:start + batch_size]
            c = centers[idx]
            o = contexts[idx]
            neg = neg_rng.gen.choice(n, size=(idx.size, negatives), p=noise)

            vc = w_in[c]                      # (B, d)
            uo = w_out[o]                     # (B, d)
            un = w_out[neg]                   # (B, neg, d)
            pos_score = np.sum(vc * uo, axis=1)
            neg_score = np.einsum("bd,bkd->bk", vc, un)
            pos_sig = expit(pos_score)
            neg_sig = expit(neg_score)
            loss = (-np.log(np.maximum(pos_sig, 1e-12)).mean()
                    - np.log(np.maximum(1.0 - neg_sig, 1e-12)).sum(axis=1).mean())
            losses.append(float(loss))

            b = idx.size
            g_pos = (pos_sig - 1.0)[:, None] / b
            g_neg = neg_sig[:, :, None] / b
            grad_vc = g_pos * uo + np.einsum("bk,bkd->bd", neg_sig, un) / b
            grad_uo = g_pos * vc
            grad_un = g_neg * vc[:, None, :]

            g_in = np.zeros_like(w_in)
            np.add.at(g_in, c, grad_vc)
            rows_in = np.unique(c)
            opt_in.step(w_in, rows_in, g_in[rows_in])

            g_out = np.zeros_like(w_out)
            np.add.at(g_out, o, grad_uo)
            np.add.at(g_out, neg.ravel(), grad_un.reshape(-1, dims))
            rows_out = np.unique(np.concatenate([o, neg.ravel()]))
            opt_out.step(w_out, rows_out, g_out[rows_out])
        epoch_losses.append(float(np.mean(losses)))
    return EmbeddingTable(vectors=w_in), epoch_losses


def augment_features(x: np.ndarray, emb: EmbeddingTable) -> np.ndarray:
    """Concatenate embeddings after the attribute columns: [X | E]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != emb.vectors.shape[0]:
        raise ValueError(f"features cover {x.shape[0]} rows, embeddings "
                         f"{emb.vectors.shape[0]}")
    if emb.vectors.shape[1] == 0:
        return x.copy()
    return np.hstack([x, emb.vectors])
