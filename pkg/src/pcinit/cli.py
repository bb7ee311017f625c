"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, load_config, set_key
from .dag import GraphFormatError, check_forward_feasible, load_graph
from .data import IDXFormatError
from .dynamics import DivergenceError, evaluate_classify, evaluate_reconstruct
from .inits import InfeasibleInitError, InitStrategy
from .runner import grid_search, load_data, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# flag -> dotted config key
OVERRIDES = {
    "method": "method", "init": "init.kind", "init_m": "init.m", "init_a": "init.a", "init_b": "init.b",
    "memory_mode": "init.memory_mode", "preset": "model.preset", "activation": "model.activation",
    "dataset": "data.dataset", "data_dir": "data.data_dir", "data_fraction": "data.fraction",
    "batching": "data.batching", "eval_limit": "data.eval_limit", "epochs": "train.epochs",
    "T_train": "train.T_train", "T_eval": "train.T_eval", "alpha": "train.alpha",
    "alpha_eval": "train.alpha_eval", "beta": "train.beta", "batch_size": "train.batch_size",
    "optimizer": "train.optimizer", "bp_loss": "bp_loss", "eval_every_batches": "eval_every_batches",
    "out": "out_dir", "run_id": "run_id", "seed": "seeds",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style config file; flags override its values")
    p.add_argument("--method", choices=["pc", "bp"])
    p.add_argument("--init", choices=["random", "zero", "null", "forward", "avg", "mem", "average", "memory"])
    p.add_argument("--init-m", dest="init_m", type=int)
    p.add_argument("--init-a", dest="init_a", type=float)
    p.add_argument("--init-b", dest="init_b", type=float)
    p.add_argument("--memory-mode", choices=["latent_only", "per_layer"])
    p.add_argument("--preset", choices=["mlp5", "decoder4"])
    p.add_argument("--activation")
    p.add_argument("--dataset", choices=["mnist", "fashion", "kmnist", "synthetic"])
    p.add_argument("--data-dir")
    p.add_argument("--data-fraction", type=float)
    p.add_argument("--batching", choices=["auto", "stream", "shuffled"])
    p.add_argument("--eval-limit", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--T-train", dest="T_train", type=int)
    p.add_argument("--T-eval", dest="T_eval", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-eval", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["adamw", "sgd"])
    p.add_argument("--bp-loss", choices=["mse", "ce"])
    p.add_argument("--eval-every-batches", type=int)
    p.add_argument("--seed", help="seed or comma-separated seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--run-id")
    p.add_argument("--no-wall-time", action="store_true", help="write wall_ms=0 so CSVs are bit-reproducible")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any dotted config key, e.g. memory.delta=50")


def build_config(args, validate: bool = True) -> tuple[RunConfig, dict]:
    if args.config:
        cfg, grid = load_config(args.config)
    else:
        cfg, grid = RunConfig(), {}
    for flag, key in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            set_key(cfg, key, v if isinstance(v, str) else v)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        set_key(cfg, k.strip(), v.strip())
    if args.no_wall_time:
        cfg.record_wall_time = False
    # grid cells are validated one by one after their keys are applied
    return (cfg.validate() if validate else cfg), grid


def _print_summary(s: dict) -> None:
    print(json.dumps({k: v for k, v in s.items() if k not in ("nets", "memories")}, indent=2))


def cmd_train(args) -> int:
    cfg, _ = build_config(args)
    _print_summary(run_experiment(cfg))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, _ = build_config(args)
    if not args.checkpoint:
        cfg.train.epochs = 0
        _print_summary(run_experiment(cfg))
        return EXIT_OK
    net, memory, _ = load_checkpoint(args.checkpoint)
    _, test = load_data(cfg)
    if cfg.task == "classify":
        result = {"test_accuracy": evaluate_classify(net, test.inputs, test.labels)}
    else:
        strategy = cfg.init if cfg.method == "pc" else InitStrategy("zero")
        _, mse = evaluate_reconstruct(net, test.inputs, cfg.train.T_eval, cfg.train.eval_alpha,
                                      strategy=strategy, memory=memory, rng=np.random.default_rng(cfg.seeds[0]))
        result = {"recon_mse": mse}
    print(json.dumps(result))
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg, space = build_config(args, validate=False)
    for item in args.space:
        if "=" not in item:
            raise UsageError(f"--space expects KEY=V1,V2,..., got {item!r}")
        k, v = item.split("=", 1)
        space[k.strip()] = [x.strip() for x in v.split(",") if x.strip()]
    best, table = grid_search(space, cfg)
    print(f"{len(table)} cells; best -> {best.out_dir}")
    return EXIT_OK


def cmd_dagcheck(args) -> int:
    g = load_graph(args.graph)
    feas = check_forward_feasible(g)
    if feas.feasible:
        print("FEASIBLE order=" + " ".join(map(str, feas.order)))
        return EXIT_OK
    if feas.cycle is not None:
        print("INFEASIBLE cycle=" + " ".join(map(str, feas.cycle)))
    else:
        print(f"INFEASIBLE unclamped_root={feas.unclamped_root}")
    return EXIT_USAGE


def cmd_plot(args) -> int:
    from .plot import plot_csv

    plot_csv(args.csv, args.out, args.metric, args.title)
    print(args.out)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pc-engine", description="Predictive coding training engine")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="train and evaluate every seed")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="evaluate a checkpoint (or the untrained net)")
    _add_run_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("grid", help="grid search over a [grid] section and/or --space flags")
    _add_run_flags(p)
    p.add_argument("--space", action="append", default=[], metavar="KEY=V1,V2")
    p.set_defaults(func=cmd_grid)
    p = sub.add_parser("dagcheck", help="decide whether a graph admits a forward initialization")
    p.add_argument("graph")
    p.set_defaults(func=cmd_dagcheck)
    p = sub.add_parser("plot", help="SVG of a metric against training SMMs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", default="test_accuracy", choices=["test_accuracy", "recon_mse", "energy_mean"])
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InfeasibleInitError, ValueError, KeyError, FileNotFoundError, IDXFormatError,
            GraphFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
