"""Batch entry points: training runs, region ensembles, synthetic studies.

One JSON config document drives a command; `--set key=value` overrides
individual entries. Every report is written atomically and contains no
timestamps or absolute state beyond the config echo, so reruns with the same
config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.special import stdtr

from . import data as data_mod
from .baselines import eval_metrics
from .data import (Dataset, apply_split_file, load_dataset, split,
                   standardize, standardize_columns, synth_generate)
from .deepwalk import (EmbeddingTable, augment_features, sample_walks,
                       train_embeddings)
from .ensemble import co_assignment_graph, partition_kway_report, select_R
from .graph import SpatialGraph
from .model import (GraphOperators, NetworkConfig, TrainConfig, default_dims,
                    export_model, forward, train)
from .numerics import Prng
from .regions import Allocation, grow_regions
from .ensemble import nmi

DEFAULT_CONFIG = {
    "seed": 0,
    "runs": 1,
    "out": "runs",
    "data": {
        "nodes": None,
        "edges": None,
        "target": "target",
        "split_file": None,
        "standardize": True,
        "ratios": [0.6, 0.2, 0.2],
    },
    "model": {
        "variant": "gcn",
        "dims": None,               # null = (c0, 4c0, 4c0)
        "layer_count": 2,
        "hidden_activation": "relu",
        "output_activation": "sigmoid",
        "regions": 30,
    },
    "train": {
        "stage1": {"learning_rate": 1e-2, "l2_factor": 1e-4,
                   "max_epochs": 500, "early_stop": 50},
        "stage2": {"learning_rate": 3e-3, "l2_factor": 1e-4,
                   "max_epochs": 300, "early_stop": 20,
                   "region_opt_interval": 10},
    },
    "regions": {"init": "grow", "adaptive": True, "contiguous": False,
                "fixed_file": None},
    "deepwalk": {"enabled": False, "dims": 14, "walk_length": 20,
                 "walks_per_node": 20, "context_size": 10, "negatives": 5,
                 "epochs": 100, "learning_rate": 0.01},
    "ensemble": {"r_values": [5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
                 "balance_u": 6000, "scheme_files": []},
    "synth": {"grid_side": 12, "regions": 3, "noise_sd": 0.05, "gamma": 0.3,
              "models": ["ann", "gcn", "gwgcn", "regiongcn"], "p_values": []},
    "metrics": {"predictions": None, "subset": "test"},
}


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config plumbing

def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise CliError(f"--set path {key!r} crosses a non-object entry")
    node[parts[-1]] = value


def load_config(args) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = _deep_merge(config, json.load(fh))
    for assignment in args.set or []:
        _apply_set(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.runs is not None:
        config["runs"] = args.runs
    if args.out is not None:
        config["out"] = args.out
    if config["runs"] < 1:
        raise CliError("runs must be at least 1")
    return config


# ---------------------------------------------------------------------------
# deterministic output files

def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _atomic_write(Path(path),
                  json.dumps(obj, sort_keys=True, indent=1,
                             default=_json_default) + "\n")


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    _atomic_write(Path(path), "\n".join(lines) + "\n")


class Stage:
    """Collects outputs in a staging directory; on failure they move to
    `quarantine/` instead of the output directory."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.dir = self.out / ".staging"
        if self.dir.exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir()

    def path(self, name: str) -> Path:
        return self.dir / name

    def commit(self) -> None:
        for item in sorted(self.dir.iterdir()):
            os.replace(item, self.out / item.name)
        self.dir.rmdir()

    def quarantine(self) -> None:
        q = self.out / "quarantine"
        if q.exists():
            shutil.rmtree(q)
        os.replace(self.dir, q)


def paired_t_one_tailed(a, b):
    """Paired t statistic and one-tailed p-value for H1: mean(a - b) < 0."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    k = d.size
    if k < 2:
        raise ValueError("paired test needs at least 2 pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return (-np.inf if mean < 0 else np.inf if mean > 0 else 0.0,
                0.0 if mean < 0 else 1.0 if mean > 0 else 0.5)
    t = mean / (sd / np.sqrt(k))
    return t, float(stdtr(k - 1, t))


# ---------------------------------------------------------------------------
# shared pipeline pieces

def _require(config, *keys):
    node = config
    for key in keys:
        node = node.get(key) if isinstance(node, dict) else None
    if node is None:
        raise CliError(f"config entry {'.'.join(keys)!r} is required")
    return node


def _compute_embeddings(graph: SpatialGraph, dw: dict, seed: int):
    rng = Prng(seed).substream("deepwalk")
    corpus = sample_walks(graph, walk_length=dw["walk_length"],
                          walks_per_node=dw["walks_per_node"],
                          rng=rng.substream("walks"))
    emb, losses = train_embeddings(
        corpus, graph.n, dims=dw["dims"], context_size=dw["context_size"],
        negatives=dw["negatives"], epochs=dw["epochs"],
        learning_rate=dw["learning_rate"], rng=rng.substream("sgns"))
    return emb, losses


def _load_data(config: dict):
    nodes = _require(config, "data", "nodes")
    edges = _require(config, "data", "edges")
    dataset, graph = load_dataset(nodes, edges, config["data"]["target"])
    if config["data"].get("standardize", True):
        dataset = standardize(dataset)
    if config["deepwalk"]["enabled"]:
        emb, _ = _compute_embeddings(graph, config["deepwalk"], config["seed"])
        vectors = standardize_columns(emb.vectors)
        feats = augment_features(dataset.features, EmbeddingTable(vectors))
        names = dataset.feature_names + tuple(
            f"e{k + 1}" for k in range(vectors.shape[1]))
        dataset = replace(dataset, features=feats, feature_names=names)
    return dataset, graph


def _network_config(config: dict, c0: int) -> NetworkConfig:
    m = config["model"]
    dims = m["dims"] or default_dims(c0, m.get("layer_count", 2))
    return NetworkConfig(dims=tuple(dims), variant=m["variant"],
                         hidden_activation=m["hidden_activation"],
                         output_activation=m["output_activation"],
                         region_count=m["regions"])


def _train_configs(config: dict):
    s1 = config["train"]["stage1"]
    s2 = config["train"]["stage2"]
    stage1 = TrainConfig(learning_rate=s1["learning_rate"],
                         l2_factor=s1["l2_factor"],
                         max_epochs=s1["max_epochs"],
                         early_stop_tolerance=s1["early_stop"])
    stage2 = TrainConfig(learning_rate=s2["learning_rate"],
                         l2_factor=s2["l2_factor"],
                         max_epochs=s2["max_epochs"],
                         early_stop_tolerance=s2["early_stop"],
                         region_opt_interval=s2["region_opt_interval"])
    return stage1, stage2


def _region_options(config: dict, dataset: Dataset):
    r = config["regions"]
    init = r["init"]
    fixed = None
    if init == "fixed":
        path = r.get("fixed_file")
        if not path:
            raise CliError("regions.init='fixed' needs regions.fixed_file")
        fixed = data_mod.load_regions_csv(path, dataset.node_ids)
    adaptive = bool(r.get("adaptive", True)) and init == "grow"
    return init, fixed, adaptive, bool(r.get("contiguous", False))


def _split_for_run(dataset: Dataset, config: dict, seed_k: int) -> Dataset:
    if config["data"].get("split_file"):
        return apply_split_file(dataset, config["data"]["split_file"])
    return split(dataset, ratios=tuple(config["data"]["ratios"]), seed=seed_k)


def _run_training(dataset, graph, config, net, seed_k):
    stage1, stage2 = _train_configs(config)
    init, fixed, adaptive, contiguous = _region_options(config, dataset)
    rng = Prng(seed_k)
    if net.variant == "regiongcn":
        return train(dataset, graph, net, stage1, stage2, rng,
                     region_init=init, fixed_allocation=fixed,
                     adaptive_zoning=adaptive, contiguous=contiguous)
    return train(dataset, graph, net, stage1, rng=rng)


def _test_metrics(dataset, graph, result):
    ops = GraphOperators(graph)
    yhat = forward(dataset.features, ops, result.params, result.config,
                   result.allocation)
    mask = dataset.test_mask
    return eval_metrics(dataset.target[mask], yhat[mask]), yhat


# ---------------------------------------------------------------------------
# subcommands

_SPLIT_TAG = {0: "", 1: "train", 2: "val", 3: "test"}


def cmd_train(config: dict, stage: Stage) -> None:
    base_dataset, graph = _load_data(config)
    net = _network_config(config, base_dataset.features.shape[1])
    runs = config["runs"]
    master = config["seed"]
    per_run = []
    for k in range(runs):
        seed_k = master + k
        ds = _split_for_run(base_dataset, config, seed_k)
        result = _run_training(ds, graph, config, net, seed_k)
        metrics, yhat = _test_metrics(ds, graph, result)

        write_csv(stage.path(f"predictions_run{k}.csv"),
                  ["node_id", "split", "prediction"],
                  [(ds.node_ids[i], _SPLIT_TAG[int(ds.split[i])], float(yhat[i]))
                   for i in range(ds.n)])
        if result.allocation is not None:
            data_mod.save_regions_csv(stage.path(f"regions_run{k}.csv"),
                                      result.allocation, ds.node_ids)
        write_json(stage.path(f"model_run{k}.json"),
                   export_model(result.params, net, result.allocation))
        per_run.append({
            "run": k, "seed": seed_k, "metrics": metrics,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "epochs": len(result.log),
            "zoning_moves": sum(e["moves"] for e in result.zoning_events),
        })
    means = {name: float(np.mean([r["metrics"][name] for r in per_run]))
             for name in ("rmse", "mae", "r2")}
    report = {"command": "train", "config": config, "variant": net.variant,
              "runs": per_run, "metrics_mean": means}
    write_json(stage.path("report.json"), report)


def cmd_ensemble(config: dict, stage: Stage) -> None:
    dataset, graph = _load_data(config)
    e = config["ensemble"]
    scheme_files = sorted(e.get("scheme_files") or [])
    schemes = []
    runs_info = []
    if scheme_files:
        for path in scheme_files:
            schemes.append(data_mod.load_regions_csv(path, dataset.node_ids))
    else:
        net = _network_config(config, dataset.features.shape[1])
        if net.variant != "regiongcn":
            raise CliError("inline ensemble runs need model.variant='regiongcn'")
        for k in range(config["runs"]):
            seed_k = config["seed"] + k
            ds = _split_for_run(dataset, config, seed_k)
            result = _run_training(ds, graph, config, net, seed_k)
            metrics, _ = _test_metrics(ds, graph, result)
            schemes.append(result.allocation)
            data_mod.save_regions_csv(stage.path(f"regions_run{k}.csv"),
                                      result.allocation, ds.node_ids)
            runs_info.append({"run": k, "seed": seed_k, "metrics": metrics})
    if not schemes:
        raise CliError("no region schemes to ensemble")

    gs = co_assignment_graph(graph, schemes)
    best_r, table = select_R(gs, e["r_values"], e["balance_u"], schemes)
    ens_alloc, diag = partition_kway_report(gs, best_r, e["balance_u"])

    data_mod.save_regions_csv(stage.path("ensemble_regions.csv"), ens_alloc,
                              dataset.node_ids)
    write_csv(stage.path("anmi_table.csv"), ["regions", "anmi"],
              [(row["regions"], row["anmi"]) for row in table])

    labeled = dataset.labeled
    rows = []
    for region in range(1, ens_alloc.p + 1):
        members = (ens_alloc.labels == region) & labeled
        count = int((ens_alloc.labels == region).sum())
        mean = float(dataset.target[members].mean()) if members.any() else ""
        rows.append((region, count, mean))
    write_csv(stage.path("region_means.csv"),
              ["region", "count", "mean_target"], rows)

    report = {"command": "ensemble", "config": config,
              "scheme_count": len(schemes), "anmi_table": table,
              "chosen_regions": best_r, "partition": diag,
              "inline_runs": runs_info}
    write_json(stage.path("report.json"), report)


def cmd_synth(config: dict, stage: Stage) -> None:
    s = config["synth"]
    master = config["seed"]
    runs = config["runs"]
    truth, graph = synth_generate(s["grid_side"], s["regions"], s["noise_sd"],
                                  seed=master, gamma=s["gamma"])
    base = truth.dataset
    p = s["regions"]

    per_model: dict[str, list] = {name: [] for name in s["models"]}
    nmi_learned, nmi_random = [], []
    for k in range(runs):
        seed_k = master + k
        ds = split(base, seed=seed_k)
        for name in s["models"]:
            cfg = dict(config)
            net = NetworkConfig(
                dims=default_dims(base.features.shape[1],
                                  config["model"].get("layer_count", 2)),
                variant=name,
                hidden_activation=config["model"]["hidden_activation"],
                output_activation=config["model"]["output_activation"],
                region_count=p)
            result = _run_training(ds, graph, cfg, net, seed_k)
            metrics, _ = _test_metrics(ds, graph, result)
            per_model[name].append(metrics)
            if name == "regiongcn":
                nmi_learned.append(nmi(result.allocation, truth.true_allocation))
                null = grow_regions(graph, p,
                                    Prng(seed_k).substream("null-regions"))
                nmi_random.append(nmi(null, truth.true_allocation))

    model_table = {}
    for name, rows in per_model.items():
        model_table[name] = {
            "per_run": rows,
            "mean": {m: float(np.mean([r[m] for r in rows]))
                     for m in ("rmse", "mae", "r2")},
            "median_rmse": float(np.median([r["rmse"] for r in rows])),
        }
    report = {"command": "synth", "config": config, "models": model_table,
              "nmi_learned": nmi_learned, "nmi_random": nmi_random}
    if "regiongcn" in per_model and "gcn" in per_model and runs >= 2:
        t, pval = paired_t_one_tailed(
            [r["rmse"] for r in per_model["regiongcn"]],
            [r["rmse"] for r in per_model["gcn"]])
        report["t_test_regiongcn_vs_gcn"] = {"t": t, "p_one_tailed": pval}

    if s.get("p_values"):
        sweep = []
        for p_val in s["p_values"]:
            rows = []
            for k in range(runs):
                seed_k = master + k
                ds = split(base, seed=seed_k)
                net = NetworkConfig(
                    dims=default_dims(base.features.shape[1]),
                    variant="regiongcn",
                    hidden_activation=config["model"]["hidden_activation"],
                    output_activation=config["model"]["output_activation"],
                    region_count=int(p_val))
                result = _run_training(ds, graph, config, net, seed_k)
                metrics, _ = _test_metrics(ds, graph, result)
                rows.append(metrics)
            sweep.append({"p": int(p_val),
                          "rmse": float(np.mean([r["rmse"] for r in rows])),
                          "r2": float(np.mean([r["r2"] for r in rows]))})
        report["p_sweep"] = sweep
    write_json(stage.path("report.json"), report)


def cmd_embed(config: dict, stage: Stage) -> None:
    dataset, graph = load_dataset(_require(config, "data", "nodes"),
                                  _require(config, "data", "edges"),
                                  config["data"]["target"])
    emb, losses = _compute_embeddings(graph, config["deepwalk"], config["seed"])
    header = ["node_id"] + [f"e{k + 1}" for k in range(emb.dims)]
    write_csv(stage.path("embeddings.csv"), header,
              [(graph.node_ids[i], *map(float, emb.vectors[i]))
               for i in range(graph.n)])
    report = {"command": "embed", "config": config,
              "dims": emb.dims, "epoch_losses": losses}
    write_json(stage.path("report.json"), report)


def cmd_metrics(config: dict, stage: Stage) -> None:
    pred_path = config["metrics"].get("predictions")
    if not pred_path:
        raise CliError("metrics.predictions is required")
    dataset, _ = load_dataset(_require(config, "data", "nodes"),
                              _require(config, "data", "edges"),
                              config["data"]["target"])
    subset = config["metrics"].get("subset", "test")

    import csv as _csv
    index = {nid: i for i, nid in enumerate(dataset.node_ids)}
    y_true, y_pred = [], []
    with open(pred_path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            nid = row["node_id"]
            if nid not in index:
                raise CliError(f"prediction for unknown node id {nid!r}")
            if subset != "all" and row.get("split", "") != subset:
                continue
            t = dataset.target[index[nid]]
            if np.isnan(t):
                continue
            y_true.append(float(t))
            y_pred.append(float(row["prediction"]))
    if len(y_true) < 2:
        raise CliError(f"fewer than 2 scored predictions in subset {subset!r}")
    metrics = eval_metrics(np.array(y_true), np.array(y_pred))
    report = {"command": "metrics", "config": config, "subset": subset,
              "count": len(y_true), "metrics": metrics}
    write_json(stage.path("report.json"), report)


# ---------------------------------------------------------------------------

_COMMANDS = {
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "synth": cmd_synth,
    "embed": cmd_embed,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regiongcn",
        description="Region-aware graph convolutional regression pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (JSON value)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--runs", type=int, help="number of repeated runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
    except (CliError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    stage = Stage(config["out"])
    try:
        _COMMANDS[args.command](config, stage)
    except Exception as exc:  # noqa: BLE001  - quarantine partial outputs
        stage.quarantine()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    stage.commit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
