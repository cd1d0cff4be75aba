"""Dataset ingestion, standardization, splits, and the synthetic generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .graph import SpatialGraph, from_edge_list, row_normalize
from .numerics import Prng, activation
from .regions import Allocation, grow_regions

# split codes
UNASSIGNED, TRAIN, VAL, TEST = 0, 1, 2, 3
_SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}
_SPLIT_CODES = {v: k for k, v in _SPLIT_NAMES.items()}


@dataclass
class Dataset:
    """Node features and target with train/val/test masks.

    `target` holds NaN where the label is absent; such nodes never enter a
    mask but their features still participate in message passing.
    """

    node_ids: tuple
    features: np.ndarray
    feature_names: tuple
    target: np.ndarray
    split: np.ndarray   # int8 codes, see TRAIN/VAL/TEST

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def labeled(self) -> np.ndarray:
        return ~np.isnan(self.target)

    @property
    def train_mask(self) -> np.ndarray:
        return self.split == TRAIN

    @property
    def val_mask(self) -> np.ndarray:
        return self.split == VAL

    @property
    def test_mask(self) -> np.ndarray:
        return self.split == TEST


def load_dataset(node_csv, edge_csv, target_column: str = "target"):
    """Read node and edge CSVs into a (Dataset, SpatialGraph) pair.

    The node table needs a `node_id` column and the target column; every
    other column is a numeric feature. An empty target cell marks the node
    unlabeled. Edge rows are `src,dst[,weight]` over the node ids.
    """
    with open(node_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "node_id" not in header or target_column not in header:
            raise ValueError(f"node table must have 'node_id' and "
                             f"{target_column!r} columns")
        id_col = header.index("node_id")
        tgt_col = header.index(target_column)
        feat_cols = [k for k in range(len(header))
                     if k not in (id_col, tgt_col)]
        feature_names = tuple(header[k] for k in feat_cols)

        node_ids, feats, target = [], [], []
        for row in reader:
            if not row:
                continue
            nid = row[id_col]
            node_ids.append(nid)
            vals = []
            for k in feat_cols:
                try:
                    vals.append(float(row[k]))
                except ValueError:
                    raise ValueError(f"non-numeric value {row[k]!r} in column "
                                     f"{header[k]!r} for node {nid!r}") from None
            feats.append(vals)
            cell = row[tgt_col].strip()
            target.append(float(cell) if cell else np.nan)
    if len(set(node_ids)) != len(node_ids):
        dup = next(i for i in node_ids if node_ids.count(i) > 1)
        raise ValueError(f"duplicate node id {dup!r}")

    index = {nid: k for k, nid in enumerate(node_ids)}
    edges = []
    with open(edge_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_weight = len(header) > 2
        for row in reader:
            if not row:
                continue
            for nid in row[:2]:
                if nid not in index:
                    raise ValueError(f"edge references unknown node id {nid!r}")
            if has_weight and len(row) > 2 and row[2].strip():
                edges.append((index[row[0]], index[row[1]], float(row[2])))
            else:
                edges.append((index[row[0]], index[row[1]]))

    graph = from_edge_list(len(node_ids), edges, node_ids=node_ids)
    dataset = Dataset(node_ids=tuple(node_ids),
                      features=np.asarray(feats, dtype=np.float64),
                      feature_names=feature_names,
                      target=np.asarray(target, dtype=np.float64),
                      split=np.zeros(len(node_ids), dtype=np.int8))
    return dataset, graph


def save_dataset(dataset: Dataset, graph: SpatialGraph, node_csv, edge_csv,
                 target_column: str = "target") -> None:
    """Inverse of `load_dataset` (splits are not persisted here)."""
    with open(node_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", *dataset.feature_names, target_column])
        for k, nid in enumerate(dataset.node_ids):
            tgt = "" if np.isnan(dataset.target[k]) else repr(float(dataset.target[k]))
            writer.writerow([nid, *(repr(float(v)) for v in dataset.features[k]),
                             tgt])
    with open(edge_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if graph.weighted:
            writer.writerow(["src", "dst", "weight"])
            for i, j, w in graph.edge_list():
                writer.writerow([graph.node_ids[i], graph.node_ids[j], repr(w)])
        else:
            writer.writerow(["src", "dst"])
            for i, j, _ in graph.edge_list():
                writer.writerow([graph.node_ids[i], graph.node_ids[j]])


def standardize_columns(x: np.ndarray, names=None) -> np.ndarray:
    """Z-score every column using the population standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    flat = np.nonzero(sd == 0)[0]
    if flat.size:
        k = int(flat[0])
        label = names[k] if names is not None else f"column {k}"
        raise ValueError(f"constant column {label!r} cannot be standardized")
    return (x - mean) / sd


def standardize(dataset: Dataset) -> Dataset:
    """Dataset with z-scored feature columns (all n rows, labeled or not)."""
    feats = standardize_columns(dataset.features, dataset.feature_names)
    return replace(dataset, features=feats)


def vote_share(dem, rep) -> np.ndarray:
    """Two-party share dem / (dem + rep), in [0, 1]."""
    dem = np.asarray(dem, dtype=np.float64)
    rep = np.asarray(rep, dtype=np.float64)
    if (dem < 0).any() or (rep < 0).any():
        raise ValueError("vote counts must be nonnegative")
    total = dem + rep
    zero = np.nonzero(total == 0)[0]
    if zero.size:
        raise ValueError(f"zero total votes at index {int(zero[0])}")
    return dem / total


def split(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Dataset:
    """Random train/val/test masks over the labeled nodes.

    Counts are floor(ratio * m) with the remainder going to train, so the
    masks always partition the labeled set. Deterministic per seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("need three positive ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios sum to {sum(ratios)}, not 1")
    labeled_idx = np.nonzero(dataset.labeled)[0]
    m = labeled_idx.size
    if m < 3:
        raise ValueError(f"need at least 3 labeled nodes, have {m}")

    rng = Prng(seed).substream("split")
    perm = rng.gen.permutation(labeled_idx)
    n_val = int(np.floor(ratios[1] * m))
    n_test = int(np.floor(ratios[2] * m))
    n_train = m - n_val - n_test
    codes = np.zeros(dataset.n, dtype=np.int8)
    codes[perm[:n_train]] = TRAIN
    codes[perm[n_train:n_train + n_val]] = VAL
    codes[perm[n_train + n_val:]] = TEST
    return replace(dataset, split=codes)


def apply_split_file(dataset: Dataset, path) -> Dataset:
    """Pin masks from a CSV `node_id,split` with split in {train,val,test}."""
    index = {nid: k for k, nid in enumerate(dataset.node_ids)}
    codes = np.zeros(dataset.n, dtype=np.int8)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            nid, name = row[0], row[1].strip()
            if nid not in index:
                raise ValueError(f"split file references unknown node id {nid!r}")
            if name not in _SPLIT_CODES:
                raise ValueError(f"unknown split label {name!r} for node {nid!r}")
            k = index[nid]
            if np.isnan(dataset.target[k]):
                raise ValueError(f"cannot assign unlabeled node {nid!r} to a split")
            codes[k] = _SPLIT_CODES[name]
    return replace(dataset, split=codes)


def save_split(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "split"])
        for k, nid in enumerate(dataset.node_ids):
            if dataset.split[k] != UNASSIGNED:
                writer.writerow([nid, _SPLIT_NAMES[int(dataset.split[k])]])


def save_regions_csv(path, alloc: Allocation, node_ids) -> None:
    """Region scheme CSV `node_id,region`, one row per node."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "region"])
        for nid, label in zip(node_ids, alloc.labels):
            writer.writerow([nid, int(label)])


def load_regions_csv(path, node_ids) -> Allocation:
    """Read a region scheme CSV back into an Allocation over `node_ids`."""
    index = {nid: k for k, nid in enumerate(node_ids)}
    labels = np.zeros(len(node_ids), dtype=np.int64)
    seen = np.zeros(len(node_ids), dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            nid = row[0]
            if nid not in index:
                raise ValueError(f"region file references unknown node id {nid!r}")
            labels[index[nid]] = int(row[1])
            seen[index[nid]] = True
    if not seen.all():
        missing = node_ids[int(np.nonzero(~seen)[0][0])]
        raise ValueError(f"region file misses node id {missing!r}")
    return Allocation(labels, int(labels.max()))


@dataclass
class SyntheticTruth:
    """Ground truth behind a generated dataset, for recovery checks."""

    dataset: Dataset
    true_allocation: Allocation
    true_coefficients: np.ndarray   # (p, c0)
    noise_sd: float


def grid_graph(side: int) -> SpatialGraph:
    """Rook-contiguity grid of side x side cells."""
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                edges.append((i, i + 1))
            if r + 1 < side:
                edges.append((i, i + side))
    return from_edge_list(side * side, edges)


def synth_generate(grid_side: int, regions: int, noise_sd: float, seed: int,
                   gamma: float = 0.3, feature_count: int = 4):
    """Grid dataset whose target follows region-specific processes.

    Each true region has its own coefficient vector (pairwise L2 distance at
    least 1); the target is a squashed linear response of the node's own
    features plus `gamma` times the neighborhood average response, with
    optional Gaussian noise, clipped to [0, 1]. Fully labeled.
    """
    if grid_side < 4:
        raise ValueError("grid side must be at least 4")
    if regions < 1:
        raise ValueError("need at least one region")
    graph = grid_graph(grid_side)
    n = graph.n
    rng = Prng(seed)

    alloc = grow_regions(graph, regions, rng.substream("synth/regions"))
    x = rng.substream("synth/features").gen.standard_normal((n, feature_count))

    coef_rng = rng.substream("synth/coefficients")
    while True:
        betas = coef_rng.gen.standard_normal((regions, feature_count))
        if regions == 1:
            break
        dists = [np.linalg.norm(betas[a] - betas[b])
                 for a in range(regions) for b in range(a + 1, regions)]
        if min(dists) >= 1.0:
            break

    response = np.sum(x * betas[alloc.zero_based()], axis=1)
    pooled = row_normalize(graph) @ response
    y = activation(response + gamma * pooled, "sigmoid")
    if noise_sd > 0:
        y = y + rng.substream("synth/noise").gen.normal(0.0, noise_sd, size=n)
    y = np.clip(y, 0.0, 1.0)

    dataset = Dataset(node_ids=graph.node_ids,
                      features=x,
                      feature_names=tuple(f"x{k}" for k in range(feature_count)),
                      target=y,
                      split=np.zeros(n, dtype=np.int8))
    truth = SyntheticTruth(dataset=dataset, true_allocation=alloc,
                           true_coefficients=betas, noise_sd=noise_sd)
    return truth, graph
