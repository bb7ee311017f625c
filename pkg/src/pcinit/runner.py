"""Experiment orchestration: seeds, batching, eval cadence, CSV rows, checkpoints.

Every summary number is recomputed from the metrics CSV, so the CSV is the
single source of truth for a run.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bp import bp_train_step
from .checkpoint import save_checkpoint
from .config import PRESETS, RunConfig, clone, save_config, set_key
from .data import Dataset, ShuffledBatcher, StreamBatcher, load_dataset, subsample_fraction
from .dynamics import Batch, evaluate_classify, evaluate_reconstruct, run_inference, train_minibatch
from .hopfield import HopfieldMemory
from .inits import InitStrategy, initialize
from .model import PCNetwork, compute_errors, make_state
from .optim import OptimizerSpec
from .smm import METRICS_COLUMNS, MetricsWriter, SMMLedger, read_metrics

# hyperparameter lists searched for the two presets
MLP_SPACE = {
    "data.fraction": [0.25, 0.5, 1.0],
    "train.beta": [0.0001, 0.0003, 0.0005, 0.001, 0.003, 0.005],
    "model.activation": ["gelu", "elu", "tanh", "leaky_relu", "relu"],
    "train.alpha": [0.003, 0.005, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5],
    "train.T_train": [2, 3, 4, 5, 6, 7],
    "init.m": [1, 2, 3],
}
DECODER_SPACE = {
    "model.activation": ["gelu", "tanh", "leaky_relu"],
    "train.beta": [0.0001, 0.0003, 0.0005],
    "train.alpha": [0.05, 0.1, 0.5],
    "train.alpha_eval": [0.05, 0.1, 0.5],
    "train.T_train": [3, 5, 10, 20],
    "train.T_eval": [3, 5, 10, 20],
}


@dataclass
class SeedStreams:
    weights: np.random.Generator
    data: np.random.Generator
    batches: np.random.Generator
    init: np.random.Generator
    memory: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "SeedStreams":
        kids = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(k) for k in kids))


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    kw = {}
    if d.dataset == "synthetic":
        kw = dict(n_per_class=d.synthetic_per_class, num_classes=d.synthetic_classes,
                  dim=d.synthetic_dim, separation=d.synthetic_separation)
    train = load_dataset(d.dataset, "train", d.data_dir or None, **kw)
    test = load_dataset(d.dataset, "test", d.data_dir or None, **kw)
    if d.eval_limit:
        test = test.subset(np.arange(min(d.eval_limit, len(test))))
    return train, test


def build_network(cfg: RunConfig, d_x: int, n_classes: int, rng: np.random.Generator) -> PCNetwork:
    p = PRESETS[cfg.model.preset]
    dt = np.dtype(cfg.model.dtype)
    if p["task"] == "classify":
        dims = [d_x, *p["hidden"], n_classes]
        clamp_input = True
    else:
        dims = [p["latent"], *p["hidden"], d_x]
        clamp_input = False
    return PCNetwork.create(dims, cfg.model.activation, rng, cfg.model.output_activation,
                            clamp_input=clamp_input, clamp_output=True, dtype=dt)


def build_memory(cfg: RunConfig, net: PCNetwork, rng: np.random.Generator) -> HopfieldMemory:
    obs_dim = net.dims[-1] + (net.dims[0] if net.clamp_input else 0)
    free = net.free_layers()
    layers = free if cfg.init.memory_mode == "per_layer" else free[:1]
    return HopfieldMemory.create(obs_dim, {l: net.dims[l] for l in layers}, rng,
                                 cfg.memory.patterns, cfg.memory.embed, cfg.memory.delta,
                                 cfg.memory.heads, dtype=net.dtype)


def make_batch(cfg: RunConfig, ds: Dataset, idx: np.ndarray, dtype) -> Batch:
    x = ds.inputs[idx].astype(dtype, copy=False)
    if cfg.task == "classify":
        return Batch(x, ds.one_hot(idx).astype(dtype), ds.labels[idx])
    return Batch(None, x, ds.labels[idx])


def make_batcher(cfg: RunConfig, ds: Dataset, rng: np.random.Generator):
    if cfg.batching == "stream":
        return StreamBatcher(ds, cfg.train.batch_size, rng)
    return ShuffledBatcher(ds, cfg.train.batch_size, rng)


class _SeedRun:
    """Mutable training state for one seed."""

    def __init__(self, cfg: RunConfig, seed: int, train: Dataset, test: Dataset):
        self.cfg, self.seed, self.test = cfg, seed, test
        self.rngs = SeedStreams.from_seed(seed)
        self.train = subsample_fraction(train, cfg.data.fraction, self.rngs.data)
        self.net = build_network(cfg, train.inputs.shape[1], train.num_classes, self.rngs.weights)
        self.dtype = self.net.dtype
        tc = cfg.train
        self.optimizer = tc.weight_optimizer()
        self.memory = self.memory_optimizer = None
        if cfg.method == "pc" and cfg.init.kind == "memory":
            self.memory = build_memory(cfg, self.net, self.rngs.memory)
            self.memory_optimizer = OptimizerSpec("adamw", tc.beta, tc.adam_betas, tc.adam_eps,
                                                  tc.weight_decay).build()
        self.batcher = make_batcher(cfg, self.train, self.rngs.batches)
        self.ledger = SMMLedger()
        self.carry = None
        self.batches = 0
        self.fallbacks = 0
        self.energies: list[float] = []
        self.t0 = time.perf_counter()

    def step(self, idx: np.ndarray) -> None:
        cfg = self.cfg
        batch = make_batch(cfg, self.train, idx, self.dtype)
        if cfg.method == "bp":
            loss = bp_train_step(self.net, batch.x, batch.y, self.optimizer, cfg.bp_loss, self.ledger)
            self.energies.append(loss / batch.size)
        else:
            _, self.carry, stats = train_minibatch(
                self.net, batch, cfg.init, cfg.train, self.ledger, self.carry,
                optimizer=self.optimizer, memory=self.memory, memory_optimizer=self.memory_optimizer,
                rng=self.rngs.init, batch_index=self.batches,
            )
            self.energies.append(stats.energy_init / batch.size)
            self.fallbacks += stats.fallback is not None
        self.batches += 1

    def evaluate(self) -> tuple[float, float]:
        cfg = self.cfg
        if cfg.task == "classify":
            return evaluate_classify(self.net, self.test.inputs, self.test.labels, self.ledger), float("nan")
        strategy = cfg.init if cfg.method == "pc" else InitStrategy("zero")
        _, mse = evaluate_reconstruct(self.net, self.test.inputs, cfg.train.T_eval, cfg.train.eval_alpha,
                                      self.ledger, strategy, self.memory, self.rngs.init)
        return float("nan"), mse

    def row(self, epoch: int) -> dict:
        acc, mse = self.evaluate()
        cfg = self.cfg
        energy = float(np.mean(self.energies)) if self.energies else float("nan")
        self.energies = []
        return {
            "run_id": cfg.run_id, "seed": self.seed, "method": cfg.method,
            "init": cfg.init.kind if cfg.method == "pc" else "none",
            "T_train": cfg.train.T_train if cfg.method == "pc" else 0,
            "T_eval": cfg.train.T_eval if cfg.task == "reconstruct" else 0,
            "m": cfg.init.split(self.net.n_layers) if (cfg.method == "pc" and cfg.init.kind == "average") else 0,
            "epoch": epoch, "batch": self.batches, "smm_train_cum": self.ledger.train_total,
            "energy_mean": energy, "test_accuracy": acc, "recon_mse": mse,
            "wall_ms": round((time.perf_counter() - self.t0) * 1000) if cfg.record_wall_time else 0,
        }


def run_seed(cfg: RunConfig, seed: int, train: Dataset, test: Dataset, writer: MetricsWriter, out: Path) -> dict:
    run = _SeedRun(cfg, seed, train, test)
    every = cfg.eval_every_batches
    writer.write(run.row(0))
    for epoch in range(1, cfg.train.epochs + 1):
        for idx in run.batcher.epoch():
            run.step(idx)
            if every and run.batches % every == 0:
                writer.write(run.row(epoch))
        if not (every and run.batches % every == 0):
            writer.write(run.row(epoch))
    if cfg.checkpoint:
        save_checkpoint(out / f"checkpoint_seed{seed}.pcn", run.net, run.memory,
                        {"seed": seed, "run_id": cfg.run_id, "batches": run.batches})
    return {"seed": seed, "batches": run.batches, "fallbacks": run.fallbacks,
            "oversampled": bool(getattr(run.batcher, "oversampled", False)), "net": run.net,
            "memory": run.memory}


def summarize(rows: list[dict], task: str) -> dict:
    """Per-seed best/final metric and mean/std across seeds, from CSV rows only."""
    key = "test_accuracy" if task == "classify" else "recon_mse"
    pick = max if task == "classify" else min
    per_seed = {}
    for r in rows:
        v = float(r[key])
        if math.isnan(v):
            continue
        s = per_seed.setdefault(int(r["seed"]), {"values": [], "smm": 0})
        s["values"].append(v)
        s["smm"] = max(s["smm"], int(float(r["smm_train_cum"])))
    best = [pick(s["values"]) for s in per_seed.values()]
    final = [s["values"][-1] for s in per_seed.values()]
    return {
        "metric": key, "seeds": sorted(per_seed),
        "best_per_seed": best, "final_per_seed": final,
        "best_mean": float(np.mean(best)) if best else float("nan"),
        "best_std": float(np.std(best)) if best else float("nan"),
        "final_mean": float(np.mean(final)) if final else float("nan"),
        "final_std": float(np.std(final)) if final else float("nan"),
        "smm_train_total": [s["smm"] for s in per_seed.values()],
    }


def run_experiment(cfg: RunConfig, train: Dataset | None = None, test: Dataset | None = None) -> dict:
    """Train/evaluate every seed; writes metrics.csv, config.ini, checkpoints and summary.json."""
    cfg.validate()
    if train is None or test is None:
        train, test = load_data(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")
    extras = []
    with MetricsWriter(out / "metrics.csv") as writer:
        for seed in cfg.seeds:
            extras.append(run_seed(cfg, seed, train, test, writer, out))
    summary = summarize(read_metrics(out / "metrics.csv"), cfg.task)
    summary.update(run_id=cfg.run_id, fallbacks=[e["fallbacks"] for e in extras],
                   oversampled=any(e["oversampled"] for e in extras))
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    summary["nets"] = [e["net"] for e in extras]
    summary["memories"] = [e["memory"] for e in extras]
    return summary


def grid_search(space: dict, template: RunConfig, out_dir=None, runner=run_experiment) -> tuple[RunConfig, list[dict]]:
    """Cartesian product over ``space`` (dotted key -> values); best by mean test metric."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("grid search needs a non-empty value list for at least one key")
    keys = list(space)
    out = Path(out_dir or template.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, best, best_cfg = [], None, None
    for i, combo in enumerate(itertools.product(*(space[k] for k in keys))):
        cfg = clone(template)
        for k, v in zip(keys, combo):
            set_key(cfg, k, v if isinstance(v, str) else _plain(v))
        cfg.run_id = f"{template.run_id}-g{i}"
        cfg.out_dir = str(out / f"cell{i:04d}")
        s = runner(cfg)
        row = {k: _plain(v) for k, v in zip(keys, combo)}
        row.update(cell=i, metric=s["metric"], best_mean=s["best_mean"], best_std=s["best_std"])
        table.append(row)
        better = (s["best_mean"] > best if s["metric"] == "test_accuracy" else s["best_mean"] < best) \
            if best is not None else True
        if better and not math.isnan(s["best_mean"]):
            best, best_cfg = s["best_mean"], cfg
    if best_cfg is None:
        best_cfg = cfg
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["cell", *keys, "metric", "best_mean", "best_std"])
        w.writeheader()
        w.writerows(table)
    save_config(best_cfg, out / "best.ini")
    return best_cfg, table


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def initial_energy_sweep(
    net: PCNetwork, ds: Dataset, strategy: InitStrategy, batching: str, batch_size: int,
    T: int, alpha: float, rng: np.random.Generator, n_batches: int | None = None,
) -> list[float]:
    """Per-sample initial energy of each batch over one epoch with frozen weights.

    States are carried between batches exactly as in training, but weights
    never change, so two strategies can be compared at matched weights.
    """
    batcher = StreamBatcher(ds, batch_size, rng) if batching == "stream" else ShuffledBatcher(ds, batch_size, rng)
    carry, out = None, []
    for i, idx in enumerate(batcher.epoch()):
        if n_batches is not None and i >= n_batches:
            break
        x = ds.inputs[idx].astype(net.dtype, copy=False)
        state = make_state(net, len(idx), x, ds.one_hot(idx).astype(net.dtype), i)
        state.labels = ds.labels[idx]
        state = initialize(strategy, net, state, carry=carry, labels_prev=None if carry is None else carry.labels,
                           labels_now=ds.labels[idx], rng=rng)
        errs = compute_errors(net, state)
        out.append(sum(errs.layer_energy) / len(idx))
        carry, _, _ = run_inference(net, state, T, alpha, errs=errs)
    return out


__all__ = [
    "MLP_SPACE", "DECODER_SPACE", "METRICS_COLUMNS", "SeedStreams", "build_network", "build_memory",
    "grid_search", "initial_energy_sweep", "load_data", "run_experiment", "summarize",
]
