"""Graph convolutional regression models with region-level parameters.

Five variants share one forward/backward code path:

* ``gcn``       generalized convolution: neighborhood and self paths get
                separate weight matrices plus a shared bias.
* ``gwgcn``     the same with a trainable per-node multiplicative weight on
                the layer input (locally weighted convolution).
* ``regiongcn`` the post-aggregation embedding is scaled and shifted by
                per-region weight/bias vectors looked up through an
                allocation of nodes to regions.
* ``ann``       the neighborhood path is dropped entirely: a plain MLP.
* ``basic_gcn`` single weight matrix applied after the renormalized
                Laplacian (the classic formulation), kept as a layer variant
                for comparison.

Gradients are hand-derived reverse mode for the masked MSE loss; L2 lives in
the optimizer (coupled weight decay), not in the loss, so reported losses are
plain MSE. Training is the two-stage scheme: a global model is fit first and
its weights transferred to the region model, whose region scheme is then
optimized every few epochs with parameters frozen.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .graph import SpatialGraph, renormalized_laplacian, row_normalize
from .numerics import (AdamState, Prng, activation, activation_grad,
                       adam_step, spmm)
from .regions import Allocation, grow_regions, optimize_allocation

VARIANTS = ("gcn", "gwgcn", "regiongcn", "ann", "basic_gcn")


@dataclass
class LayerParams:
    """Global per-layer parameters: neighborhood/self weights and bias."""

    theta: np.ndarray   # (c_in, c_out), applied to the pooled neighborhood
    phi: np.ndarray     # (c_in, c_out), applied to the node itself
    psi: np.ndarray     # (c_out,), shared bias


@dataclass
class RegionLayerParams:
    """Per-region scale and shift; row j belongs to region j+1."""

    omega: np.ndarray   # (p, c_out)
    psi: np.ndarray     # (p, c_out)


@dataclass
class LocalWeights:
    """Per-node multiplicative weights on a layer input."""

    omega_loc: np.ndarray   # (n, c_in)


@dataclass
class OutputHead:
    """Linear readout with output transform tau."""

    u: np.ndarray        # (c_last,)
    b: np.ndarray        # 0-d array, kept as ndarray for uniform updates
    tau: str = "sigmoid"


@dataclass
class NetworkConfig:
    dims: tuple          # (c_0, ..., c_L)
    variant: str = "gcn"
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    region_count: int = 1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ValueError(f"bad layer dims {self.dims}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.region_count < 1:
            raise ValueError("region_count must be at least 1")

    @property
    def layer_count(self) -> int:
        return len(self.dims) - 1


def default_dims(c0: int, layer_count: int = 2, width_factor: int = 4) -> tuple:
    """Default widths: every hidden/output embedding is width_factor * c0."""
    return (c0,) + (width_factor * c0,) * layer_count


@dataclass
class ModelParams:
    layers: list
    head: OutputHead
    region_layers: list | None = None   # regiongcn only
    local_layers: list | None = None    # gwgcn only


def init_params(config: NetworkConfig, rng: Prng, n: int | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases, all-ones local/region scales."""
    layers = []
    for l in range(config.layer_count):
        c_in, c_out = config.dims[l], config.dims[l + 1]
        s = np.sqrt(6.0 / (c_in + c_out))
        layers.append(LayerParams(
            theta=rng.gen.uniform(-s, s, size=(c_in, c_out)),
            phi=rng.gen.uniform(-s, s, size=(c_in, c_out)),
            psi=np.zeros(c_out)))
    c_last = config.dims[-1]
    s = np.sqrt(6.0 / (c_last + 1))
    head = OutputHead(u=rng.gen.uniform(-s, s, size=c_last),
                      b=np.float64(0.0), tau=config.output_activation)

    region_layers = None
    if config.variant == "regiongcn":
        p = config.region_count
        region_layers = [RegionLayerParams(omega=np.ones((p, config.dims[l + 1])),
                                           psi=np.zeros((p, config.dims[l + 1])))
                         for l in range(config.layer_count)]
    local_layers = None
    if config.variant == "gwgcn":
        if n is None:
            raise ValueError("gwgcn needs the node count n at init")
        local_layers = [LocalWeights(omega_loc=np.ones((n, config.dims[l])))
                        for l in range(config.layer_count)]
    return ModelParams(layers=layers, head=head, region_layers=region_layers,
                       local_layers=local_layers)


def named_tensors(params: ModelParams, config: NetworkConfig):
    """Trainable tensors of the configured variant, in a stable order."""
    out = []
    for l, layer in enumerate(params.layers):
        if config.variant != "ann":
            out.append((f"layers.{l}.theta", layer.theta))
        if config.variant != "basic_gcn":
            out.append((f"layers.{l}.phi", layer.phi))
        if config.variant != "regiongcn":
            out.append((f"layers.{l}.psi", layer.psi))
        if config.variant == "gwgcn":
            out.append((f"layers.{l}.omega_loc", params.local_layers[l].omega_loc))
        if config.variant == "regiongcn":
            out.append((f"layers.{l}.region_omega", params.region_layers[l].omega))
            out.append((f"layers.{l}.region_psi", params.region_layers[l].psi))
    out.append(("head.u", params.head.u))
    out.append(("head.b", params.head.b))
    return out


def set_tensor(params: ModelParams, name: str, value: np.ndarray) -> None:
    """Assign a trainable tensor by its `named_tensors` name."""
    if name == "head.u":
        params.head.u = value
        return
    if name == "head.b":
        params.head.b = np.float64(value)
        return
    _, idx, fieldname = name.split(".")
    l = int(idx)
    if fieldname == "omega_loc":
        params.local_layers[l].omega_loc = value
    elif fieldname == "region_omega":
        params.region_layers[l].omega = value
    elif fieldname == "region_psi":
        params.region_layers[l].psi = value
    else:
        setattr(params.layers[l], fieldname, value)


def clone_params(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


class GraphOperators:
    """Propagation matrices shared by every forward/backward pass."""

    def __init__(self, graph: SpatialGraph):
        self.graph = graph
        self.n = graph.n
        self._dinva = None
        self._dinva_t = None
        self._laplacian = None

    @property
    def dinva(self):
        if self._dinva is None:
            self._dinva = row_normalize(self.graph)
        return self._dinva

    @property
    def dinva_t(self):
        if self._dinva_t is None:
            self._dinva_t = self.dinva.T.tocsr()
            self._dinva_t.sort_indices()
        return self._dinva_t

    @property
    def laplacian(self):
        if self._laplacian is None:
            self._laplacian = renormalized_laplacian(self.graph)
        return self._laplacian


def as_operators(graph_or_ops) -> GraphOperators:
    if isinstance(graph_or_ops, GraphOperators):
        return graph_or_ops
    return GraphOperators(graph_or_ops)


# ---------------------------------------------------------------------------
# forward passes

@dataclass
class LayerCache:
    x_in: np.ndarray
    x_eff: np.ndarray          # x_in, or x_in * omega_loc for gwgcn
    sx: np.ndarray | None      # propagation @ x_eff, None for ann
    h: np.ndarray | None       # pre-region product, regiongcn only
    z: np.ndarray              # pre-activation
    x_out: np.ndarray


@dataclass
class ForwardCache:
    layers: list
    head_z: np.ndarray
    yhat: np.ndarray


def _check_alloc(alloc: Allocation, regions: RegionLayerParams, n: int):
    if alloc is None:
        raise ValueError("regiongcn forward needs an allocation")
    if alloc.n != n:
        raise ValueError(f"allocation covers {alloc.n} nodes, graph has {n}")
    if alloc.p != regions.omega.shape[0]:
        raise ValueError(f"allocation has p={alloc.p} but region parameters "
                         f"have {regions.omega.shape[0]} rows")


def _layer_forward(variant: str, x, prop, layer: LayerParams, act: str,
                   local: LocalWeights | None = None,
                   regions: RegionLayerParams | None = None,
                   ridx: np.ndarray | None = None) -> LayerCache:
    x_eff = x * local.omega_loc if variant == "gwgcn" else x
    sx = None
    h = None
    if variant == "ann":
        z = x_eff @ layer.phi + layer.psi
    elif variant == "basic_gcn":
        sx = spmm(prop, x_eff)
        z = sx @ layer.theta + layer.psi
    elif variant == "regiongcn":
        sx = spmm(prop, x_eff)
        h = sx @ layer.theta + x_eff @ layer.phi
        z = h * regions.omega[ridx] + regions.psi[ridx]
    else:  # gcn, gwgcn
        sx = spmm(prop, x_eff)
        z = sx @ layer.theta + x_eff @ layer.phi + layer.psi
    return LayerCache(x_in=x, x_eff=x_eff, sx=sx, h=h, z=z,
                      x_out=activation(z, act))


def gconv_forward(x, dinva, layer: LayerParams, act: str = "relu") -> np.ndarray:
    """Generalized graph convolution with separate neighborhood/self paths."""
    return _layer_forward("gcn", x, dinva, layer, act).x_out


def basic_gconv_forward(x, laplacian, theta, psi, act: str = "relu") -> np.ndarray:
    """Classic single-weight convolution over the renormalized Laplacian."""
    layer = LayerParams(theta=theta, phi=np.zeros_like(theta), psi=psi)
    return _layer_forward("basic_gcn", x, laplacian, layer, act).x_out


def gwconv_forward(x, dinva, layer: LayerParams, local: LocalWeights,
                   act: str = "relu") -> np.ndarray:
    """Locally weighted convolution: the input is scaled per node first."""
    if local.omega_loc.shape != x.shape:
        raise ValueError(f"local weights {local.omega_loc.shape} do not match "
                         f"input {x.shape}")
    return _layer_forward("gwgcn", x, dinva, layer, act, local=local).x_out


def regconv_forward(x, dinva, layer: LayerParams, regions: RegionLayerParams,
                    alloc: Allocation, act: str = "relu") -> np.ndarray:
    """Regionally weighted convolution: scale/shift by the node's region."""
    _check_alloc(alloc, regions, x.shape[0])
    return _layer_forward("regiongcn", x, dinva, layer, act, regions=regions,
                          ridx=alloc.zero_based()).x_out


def forward(x, graph_or_ops, params: ModelParams, config: NetworkConfig,
            alloc: Allocation | None = None, return_cache: bool = False):
    """Full model forward pass: stacked layers plus the linear readout."""
    ops = as_operators(graph_or_ops)
    variant = config.variant
    if variant == "ann":
        prop = None
    elif variant == "basic_gcn":
        prop = ops.laplacian
    else:
        prop = ops.dinva
    ridx = None
    if variant == "regiongcn":
        _check_alloc(alloc, params.region_layers[0], x.shape[0])
        ridx = alloc.zero_based()

    caches = []
    h = x
    for l in range(config.layer_count):
        lc = _layer_forward(
            variant, h, prop, params.layers[l], config.hidden_activation,
            local=params.local_layers[l] if variant == "gwgcn" else None,
            regions=params.region_layers[l] if variant == "regiongcn" else None,
            ridx=ridx)
        caches.append(lc)
        h = lc.x_out
    head_z = h @ params.head.u + params.head.b
    yhat = activation(head_z, params.head.tau)
    if return_cache:
        return yhat, ForwardCache(layers=caches, head_z=head_z, yhat=yhat)
    return yhat


# ---------------------------------------------------------------------------
# loss and hand-derived gradients

def masked_mse(yhat, y, mask) -> float:
    m = int(mask.sum())
    if m == 0:
        raise ValueError("mask selects no labeled nodes")
    resid = np.where(mask, yhat - y, 0.0)
    return float(resid @ resid) / m


def loss_and_grads(params: ModelParams, config: NetworkConfig, graph_or_ops,
                   x, y, train_mask, alloc: Allocation | None = None):
    """Training MSE and its exact gradient for every trainable tensor.

    Returns (loss, grads) where grads maps `named_tensors` names to arrays of
    the same shape. Only labels under `train_mask` enter the loss; L2 decay is
    not part of the loss and is applied by the optimizer instead.
    """
    ops = as_operators(graph_or_ops)
    m = int(np.sum(train_mask))
    if m == 0:
        raise ValueError("empty training mask")
    yhat, cache = forward(x, ops, params, config, alloc, return_cache=True)

    resid = np.where(train_mask, yhat - y, 0.0)
    loss = float(resid @ resid) / m

    variant = config.variant
    head = params.head
    grads: dict[str, np.ndarray] = {}

    d_yhat = (2.0 / m) * resid
    d_head_z = d_yhat * activation_grad(cache.head_z, head.tau)
    x_last = cache.layers[-1].x_out
    grads["head.u"] = x_last.T @ d_head_z
    grads["head.b"] = np.float64(d_head_z.sum())
    d_x = np.outer(d_head_z, head.u)

    ridx = alloc.zero_based() if variant == "regiongcn" else None
    for l in range(config.layer_count - 1, -1, -1):
        lc = cache.layers[l]
        layer = params.layers[l]
        dz = d_x * activation_grad(lc.z, config.hidden_activation)

        if variant == "regiongcn":
            reg = params.region_layers[l]
            d_omega = np.zeros_like(reg.omega)
            d_rpsi = np.zeros_like(reg.psi)
            np.add.at(d_omega, ridx, dz * lc.h)
            np.add.at(d_rpsi, ridx, dz)
            grads[f"layers.{l}.region_omega"] = d_omega
            grads[f"layers.{l}.region_psi"] = d_rpsi
            dh = dz * reg.omega[ridx]
        else:
            grads[f"layers.{l}.psi"] = dz.sum(axis=0)
            dh = dz

        if variant == "ann":
            grads[f"layers.{l}.phi"] = lc.x_eff.T @ dh
            d_xeff = dh @ layer.phi.T
        elif variant == "basic_gcn":
            grads[f"layers.{l}.theta"] = lc.sx.T @ dh
            d_xeff = spmm(ops.laplacian, dh) @ layer.theta.T
        else:
            grads[f"layers.{l}.theta"] = lc.sx.T @ dh
            grads[f"layers.{l}.phi"] = lc.x_eff.T @ dh
            d_xeff = spmm(ops.dinva_t, dh) @ layer.theta.T + dh @ layer.phi.T

        if variant == "gwgcn":
            local = params.local_layers[l]
            grads[f"layers.{l}.omega_loc"] = d_xeff * lc.x_in
            d_x = d_xeff * local.omega_loc
        else:
            d_x = d_xeff
    return loss, grads


# ---------------------------------------------------------------------------
# localized loss evaluation for region optimization

class RegionLossEvaluator:
    """Exact training loss as a function of the allocation, parameters frozen.

    A query that differs from the cached base allocation at one node is
    answered by recomputing only the rows inside that node's forward cone
    (one extra hop per layer); anything else falls back to a full forward
    pass. The cache moves only through `rebase`, which `optimize_allocation`
    calls on every committed move, so the reported loss is a deterministic
    function of the queried allocation alone.
    """

    def __init__(self, params: ModelParams, config: NetworkConfig, graph_or_ops,
                 x, y, train_mask, alloc: Allocation):
        if config.variant != "regiongcn":
            raise ValueError("region loss evaluation needs the regiongcn variant")
        self.params = params
        self.config = config
        self.ops = as_operators(graph_or_ops)
        self.x = x
        self.y = y
        self.train_mask = np.asarray(train_mask, dtype=bool)
        self.m = int(self.train_mask.sum())
        if self.m == 0:
            raise ValueError("empty training mask")
        adj = self.ops.graph.adjacency
        self._indptr, self._indices = adj.indptr, adj.indices
        self.rebase(alloc)

    def rebase(self, alloc: Allocation) -> None:
        """Recompute the cached forward state on `alloc`."""
        yhat, cache = forward(self.x, self.ops, self.params, self.config,
                              alloc, return_cache=True)
        self.base = alloc.copy()
        self.cache = cache
        resid = np.where(self.train_mask, yhat - self.y, 0.0)
        self.sq = resid * resid
        self.base_loss = float(self.sq.sum()) / self.m

    def __call__(self, alloc: Allocation) -> float:
        diff = np.nonzero(alloc.labels != self.base.labels)[0]
        if diff.size == 0:
            return self.base_loss
        if diff.size == 1:
            i = int(diff[0])
            return self.move_loss(i, int(alloc.labels[i]))
        yhat = forward(self.x, self.ops, self.params, self.config, alloc)
        resid = np.where(self.train_mask, yhat - self.y, 0.0)
        return float(resid @ resid) / self.m

    def move_loss(self, node: int, new_region: int) -> float:
        """Training loss of the base allocation with one node reassigned."""
        if not 1 <= new_region <= self.base.p:
            raise ValueError(f"region {new_region} outside [1, {self.base.p}]")
        if new_region == int(self.base.labels[node]):
            return self.base_loss

        cfg = self.config
        dinva = self.ops.dinva
        base_ridx = self.base.zero_based()
        rows = np.array([node], dtype=np.int64)
        prev_rows = None
        prev_new = None
        for l in range(cfg.layer_count):
            lc = self.cache.layers[l]
            x_prev = self.x if l == 0 else self.cache.layers[l - 1].x_out
            s_rows = dinva[rows]
            nb = np.asarray(s_rows @ x_prev)
            x_self = x_prev[rows].copy()
            if prev_rows is not None:
                delta = prev_new - x_prev[prev_rows]
                nb += np.asarray(s_rows[:, prev_rows] @ delta)
                pos = {int(r): k for k, r in enumerate(prev_rows)}
                for k, r in enumerate(rows):
                    if int(r) in pos:
                        x_self[k] = prev_new[pos[int(r)]]
            layer = self.params.layers[l]
            reg = self.params.region_layers[l]
            h = nb @ layer.theta + x_self @ layer.phi
            ridx_rows = base_ridx[rows].copy()
            ridx_rows[rows == node] = new_region - 1
            z = h * reg.omega[ridx_rows] + reg.psi[ridx_rows]
            out = activation(z, cfg.hidden_activation)
            prev_rows, prev_new = rows, out
            if l < cfg.layer_count - 1:
                nbrs = np.concatenate(
                    [self._indices[self._indptr[i]:self._indptr[i + 1]]
                     for i in rows])
                rows = np.unique(np.concatenate([rows, nbrs]))

        head = self.params.head
        z_head = prev_new @ head.u + head.b
        yh = activation(z_head, head.tau)
        new_sq = np.where(self.train_mask[prev_rows],
                          (yh - self.y[prev_rows]) ** 2, 0.0)
        return self.base_loss + float((new_sq - self.sq[prev_rows]).sum()) / self.m


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    learning_rate: float
    l2_factor: float = 0.0
    max_epochs: int = 1000
    early_stop_tolerance: int = 50     # consecutive epochs above the best
    region_opt_interval: int = 10      # epochs between zoning passes (stage 2)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs < 1:
            raise ValueError("learning_rate and max_epochs must be positive")
        if self.early_stop_tolerance < 1 or self.region_opt_interval < 1:
            raise ValueError("tolerances must be positive")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class EarlyStopper:
    """Stop once the metric sits strictly above its minimum for T epochs.

    Epochs equal to the historical minimum neither reset nor advance the
    counter; only a strict improvement resets it.
    """

    def __init__(self, tolerance: int):
        self.tolerance = tolerance
        self.best = np.inf
        self.best_epoch = None
        self.count = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch; returns True when `value` is a new minimum."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.count = 0
            return True
        if value > self.best:
            self.count += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.count >= self.tolerance


@dataclass
class TrainResult:
    params: ModelParams
    config: NetworkConfig
    allocation: Allocation | None
    log: list
    zoning_events: list
    best_epoch: int | None
    best_val_loss: float
    stage1_log: list | None = None


def _train_loop(params, config, ops, x, y, train_mask, val_mask, cfg,
                alloc=None, zoning=None):
    """Adam loop with validation-based early stopping and optional zoning.

    `zoning(params, alloc, epoch)` runs between epochs and returns
    (new_alloc, event_record). The best-validation snapshot restores both the
    parameters and the allocation they were trained against.
    """
    opt = {name: AdamState.zeros_like(t)
           for name, t in named_tensors(params, config)}
    stopper = EarlyStopper(cfg.early_stop_tolerance)
    best_params = clone_params(params)
    best_alloc = alloc.copy() if alloc is not None else None
    log = []
    events = []
    for epoch in range(1, cfg.max_epochs + 1):
        loss, grads = loss_and_grads(params, config, ops, x, y, train_mask,
                                     alloc)
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch)
        for name, tensor in named_tensors(params, config):
            new_t, opt[name] = adam_step(tensor, grads[name], opt[name],
                                         cfg.learning_rate, cfg.l2_factor)
            set_tensor(params, name, new_t)
        yhat = forward(x, ops, params, config, alloc)
        val_loss = masked_mse(yhat, y, val_mask)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        if stopper.update(epoch, val_loss):
            best_params = clone_params(params)
            best_alloc = alloc.copy() if alloc is not None else None
        log.append({"epoch": epoch, "train_loss": float(loss),
                    "val_loss": float(val_loss)})
        if stopper.should_stop:
            break
        if zoning is not None and epoch % cfg.region_opt_interval == 0:
            alloc, event = zoning(params, alloc, epoch)
            if event is not None:
                events.append(event)
    return (best_params, best_alloc, log, events, stopper.best_epoch,
            float(stopper.best) if np.isfinite(stopper.best) else np.inf)


def transfer_from_global(global_params: ModelParams, config: NetworkConfig) -> ModelParams:
    """Seed a region model from a trained global one.

    Weight matrices are copied, every region scale starts at 1 and every
    region shift at the global layer bias, so the transferred model computes
    exactly the same function as the global one.
    """
    if config.variant != "regiongcn":
        raise ValueError("transfer target must be the regiongcn variant")
    p = config.region_count
    layers = [LayerParams(theta=l.theta.copy(), phi=l.phi.copy(),
                          psi=l.psi.copy()) for l in global_params.layers]
    region_layers = [RegionLayerParams(omega=np.ones((p, l.psi.size)),
                                       psi=np.tile(l.psi, (p, 1)))
                     for l in global_params.layers]
    head = OutputHead(u=global_params.head.u.copy(),
                      b=np.float64(global_params.head.b),
                      tau=global_params.head.tau)
    return ModelParams(layers=layers, head=head, region_layers=region_layers)


def train(dataset, graph: SpatialGraph, config: NetworkConfig,
          stage1: TrainConfig, stage2: TrainConfig | None = None,
          rng: Prng | None = None, *, region_init: str = "grow",
          fixed_allocation: Allocation | None = None,
          adaptive_zoning: bool = True, contiguous: bool = False) -> TrainResult:
    """Train the configured variant; regiongcn runs the two-stage scheme.

    Stage 1 fits the global generalized-convolution model. Its weights are
    transferred, the allocation is initialized (random growth, k-means on the
    features, or a fixed scheme), and stage 2 trains the region model with a
    fresh optimizer, running the zoning procedure every
    `region_opt_interval` epochs when `adaptive_zoning` is set.
    """
    if rng is None:
        rng = Prng(0)
    x, y = dataset.features, dataset.target
    train_mask, val_mask = dataset.train_mask, dataset.val_mask
    if not train_mask.any() or not val_mask.any():
        raise ValueError("dataset needs nonempty train and validation masks")
    ops = GraphOperators(graph)

    if config.variant != "regiongcn":
        params = init_params(config, rng.substream("train/init"), n=graph.n)
        best, _, log, _, best_epoch, best_val = _train_loop(
            params, config, ops, x, y, train_mask, val_mask, stage1)
        return TrainResult(params=best, config=config, allocation=None,
                           log=log, zoning_events=[], best_epoch=best_epoch,
                           best_val_loss=best_val)

    if stage2 is None:
        raise ValueError("regiongcn training needs a stage-2 config")

    stage1_config = replace(config, variant="gcn")
    g_params = init_params(stage1_config, rng.substream("train/init"), n=graph.n)
    g_best, _, s1_log, _, _, _ = _train_loop(
        g_params, stage1_config, ops, x, y, train_mask, val_mask, stage1)

    params = transfer_from_global(g_best, config)
    p = config.region_count
    if region_init == "grow":
        alloc = grow_regions(graph, p, rng.substream("train/regions"))
    elif region_init == "kmeans":
        from .regions import kmeans_allocate
        alloc = kmeans_allocate(x, p, rng.substream("train/regions"))
    elif region_init == "fixed":
        if fixed_allocation is None:
            raise ValueError("region_init='fixed' needs fixed_allocation")
        if fixed_allocation.n != graph.n:
            raise ValueError("fixed allocation does not cover the graph")
        alloc = fixed_allocation.copy()
    else:
        raise ValueError(f"unknown region_init {region_init!r}")

    zoning = None
    if adaptive_zoning:
        def zoning(cur_params, cur_alloc, epoch):
            evaluator = RegionLossEvaluator(cur_params, config, ops, x, y,
                                            train_mask, cur_alloc)
            before = evaluator.base_loss
            moves = []
            new_alloc = optimize_allocation(
                evaluator, graph, cur_alloc, contiguous=contiguous,
                on_move=lambda i, a, b, lb, la: moves.append((int(i), a, b)))
            after = evaluator(new_alloc)
            event = {"epoch": epoch, "moves": len(moves),
                     "loss_before": before, "loss_after": after,
                     "empty_regions": int((new_alloc.region_sizes() == 0).sum())}
            return new_alloc, event

    best, best_alloc, log, events, best_epoch, best_val = _train_loop(
        params, config, ops, x, y, train_mask, val_mask, stage2,
        alloc=alloc, zoning=zoning)
    return TrainResult(params=best, config=config, allocation=best_alloc,
                       log=log, zoning_events=events, best_epoch=best_epoch,
                       best_val_loss=best_val, stage1_log=s1_log)


# ---------------------------------------------------------------------------
# model export / import (lossless JSON round trip)

FORMAT_VERSION = 1


def export_model(params: ModelParams, config: NetworkConfig,
                 alloc: Allocation | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {
            "dims": list(config.dims),
            "variant": config.variant,
            "hidden_activation": config.hidden_activation,
            "output_activation": config.output_activation,
            "region_count": config.region_count,
        },
        "layers": [{"theta": l.theta.tolist(), "phi": l.phi.tolist(),
                    "psi": l.psi.tolist()} for l in params.layers],
        "head": {"u": params.head.u.tolist(), "b": float(params.head.b),
                 "tau": params.head.tau},
        "region_layers": None,
        "local_layers": None,
        "allocation": None,
    }
    if params.region_layers is not None:
        doc["region_layers"] = [{"omega": r.omega.tolist(),
                                 "psi": r.psi.tolist()}
                                for r in params.region_layers]
    if params.local_layers is not None:
        doc["local_layers"] = [{"omega_loc": w.omega_loc.tolist()}
                               for w in params.local_layers]
    if alloc is not None:
        doc["allocation"] = {"labels": alloc.labels.tolist(), "p": alloc.p}
    return doc


def import_model(doc: dict):
    """Inverse of `export_model`; returns (params, config, allocation)."""
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
    c = doc["config"]
    config = NetworkConfig(dims=tuple(c["dims"]), variant=c["variant"],
                           hidden_activation=c["hidden_activation"],
                           output_activation=c["output_activation"],
                           region_count=c["region_count"])
    layers = [LayerParams(theta=np.array(l["theta"], dtype=np.float64),
                          phi=np.array(l["phi"], dtype=np.float64),
                          psi=np.array(l["psi"], dtype=np.float64))
              for l in doc["layers"]]
    head = OutputHead(u=np.array(doc["head"]["u"], dtype=np.float64),
                      b=np.float64(doc["head"]["b"]), tau=doc["head"]["tau"])
    region_layers = None
    if doc.get("region_layers") is not None:
        region_layers = [RegionLayerParams(
            omega=np.array(r["omega"], dtype=np.float64),
            psi=np.array(r["psi"], dtype=np.float64))
            for r in doc["region_layers"]]
    local_layers = None
    if doc.get("local_layers") is not None:
        local_layers = [LocalWeights(
            omega_loc=np.array(w["omega_loc"], dtype=np.float64))
            for w in doc["local_layers"]]
    alloc = None
    if doc.get("allocation") is not None:
        alloc = Allocation(np.array(doc["allocation"]["labels"]),
                           doc["allocation"]["p"])
    params = ModelParams(layers=layers, head=head,
                         region_layers=region_layers,
                         local_layers=local_layers)
    return params, config, alloc


def save_model(path, params, config, alloc=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(export_model(params, config, alloc), fh, sort_keys=True)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return import_model(json.load(fh))
