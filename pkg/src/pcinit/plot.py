"""Static SVG line charts of test metric against cumulative training SMMs."""

from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .smm import read_metrics  # noqa: E402


def curves(rows: list[dict], metric: str = "test_accuracy") -> dict[str, tuple[list[float], list[float]]]:
    """Seed-averaged (smm, metric) curve per run_id, aligned on eval index."""
    by_run = defaultdict(lambda: defaultdict(list))
    for r in rows:
        v = float(r[metric])
        if math.isnan(v):
            continue
        by_run[r["run_id"]][int(r["seed"])].append((float(r["smm_train_cum"]), v))
    out = {}
    for run, seeds in by_run.items():
        n = min(len(s) for s in seeds.values())
        xs = [sum(s[i][0] for s in seeds.values()) / len(seeds) for i in range(n)]
        ys = [sum(s[i][1] for s in seeds.values()) / len(seeds) for i in range(n)]
        out[run] = (xs, ys)
    return out


def plot_csv(paths, out_path, metric: str = "test_accuracy", title: str | None = None) -> None:
    rows = [r for p in paths for r in read_metrics(p)]
    fig, ax = plt.subplots(figsize=(6, 4))
    for run, (xs, ys) in sorted(curves(rows, metric).items()):
        ax.plot(xs, ys, marker="o", ms=3, label=run)
    ax.set_xlabel("training SMMs (cumulative)")
    ax.set_ylabel(metric.replace("_", " "))
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
