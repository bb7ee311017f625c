"""Run (or reuse) the long experiments read by the acceptance suite.

Each named cell is cached in results/<name>/cached.json together with a hash
of its config and of the engine sources; cells whose cache is current are
skipped.

Usage: python scripts/run_experiments.py [NAME ...] [--list]
"""

from __future__ import annotations

import argparse
import logging
import time

from pcinit.experiments import cached_result, energy_comparison, experiment_configs

ENERGY = "fashion_energy"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="cells to run (default: all)")
    ap.add_argument("--list", action="store_true", help="print cell names and cache status")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cells = experiment_configs()
    names = args.names or [*cells, ENERGY]
    for name in names:
        if name != ENERGY and name not in cells:
            ap.error(f"unknown cell {name!r}; known: {', '.join([*cells, ENERGY])}")
    for name in names:
        if args.list:
            done = (energy_comparison() if name == ENERGY else cached_result(name)) is not None
            print(f"{name:20s} {'cached' if done else 'missing'}")
            continue
        t0 = time.perf_counter()
        logging.info("start %s", name)
        data = energy_comparison(run_if_missing=True) if name == ENERGY else cached_result(name, run_if_missing=True)
        logging.info("done %s in %.0fs: %s", name, time.perf_counter() - t0, data["summary"])


if __name__ == "__main__":
    main()
