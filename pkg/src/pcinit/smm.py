"""Sequential-matrix-multiplication (SMM) accounting and run metrics.

Charging rules, one entry per sequential (critical-path) matmul:

* one PC inference step: 2 (predictions, then error back-projection)
* a forward sweep through k layers: k
* one BP update on an L-layer net: 2L - 1
* class averaging of carried states: 0
* one Hopfield retrieval: 2 (query-key, attention-value)

Bias additions and elementwise work are not counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

PHASES = ("init", "inference", "learning", "eval")

SMM_PER_INFERENCE_STEP = 2
SMM_PER_RETRIEVAL = 2

METRICS_COLUMNS = (
    "run_id", "seed", "method", "init", "T_train", "T_eval", "m", "epoch", "batch",
    "smm_train_cum", "energy_mean", "test_accuracy", "recon_mse", "wall_ms",
)


@dataclass
class SMMLedger:
    counts: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))

    def charge(self, phase: str, count: int) -> "SMMLedger":
        if phase not in self.counts:
            raise KeyError(f"unknown SMM phase {phase!r}; expected one of {PHASES}")
        if count < 0:
            raise ValueError(f"SMM count must be non-negative, got {count}")
        self.counts[phase] += int(count)
        return self

    @property
    def train_total(self) -> int:
        return self.counts["init"] + self.counts["inference"] + self.counts["learning"]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict:
        return dict(self.counts)


def charge(ledger: SMMLedger | None, phase: str, count: int) -> SMMLedger | None:
    """Charge ``ledger`` if one is given; ``None`` means accounting is off."""
    if ledger is not None:
        ledger.charge(phase, count)
    return ledger


def bp_update_smm(n_layers: int) -> int:
    return 2 * n_layers - 1


def pc_update_smm(T: int) -> int:
    return SMM_PER_INFERENCE_STEP * T


def init_smm(kind: str, n_layers: int, m: int = 0, supervised: bool = True,
             memory_mode: str = "latent_only") -> int:
    """SMMs charged by one initialization of a layered net (no fallbacks).

    ``supervised`` means the input layer is clamped. Latent-only memory
    retrieves the first free layer and sweeps forward to h_{L-1}.
    """
    L = n_layers
    if kind == "forward":
        return L
    if kind == "average":
        return m
    if kind in ("zero", "random", "null"):
        return 0
    if kind == "memory":
        if memory_mode == "per_layer":
            return SMM_PER_RETRIEVAL
        first_free = 1 if supervised else 0
        return SMM_PER_RETRIEVAL + (L - 1 - first_free)
    raise ValueError(f"unknown init kind {kind!r}")


def predicted_train_smm(
    kind: str, T: int, n_layers: int, n_batches: int, m: int = 0, supervised: bool = True,
    first_batch_fallback: str | None = None, memory_mode: str = "latent_only",
) -> int:
    """Closed-form training SMM total for ``n_batches`` PC updates.

    ``first_batch_fallback`` names the init used for batch 0 by null/average
    (there is no carry yet). For memory init ``"forward"`` adds the warm-start
    forward sweep before the first retrieval.
    """
    if n_batches <= 0:
        return 0
    per_batch = init_smm(kind, n_layers, m, supervised, memory_mode) + pc_update_smm(T)
    total = per_batch * n_batches
    if first_batch_fallback is None:
        return total
    if kind in ("null", "average"):
        first = init_smm(first_batch_fallback, n_layers, m, supervised) + pc_update_smm(T)
        total += first - per_batch
    elif kind == "memory" and first_batch_fallback == "forward":
        total += init_smm("forward", n_layers)
    return total


def smm_to_target_error(rows: list[dict], levels: list[float], best: float | None = None) -> list[dict]:
    """Minimal cumulative training SMM at which accuracy >= best * (1 - level).

    ``rows`` need ``smm_train_cum`` and ``test_accuracy``. ``best`` defaults
    to the best accuracy in ``rows``. Unreached levels get ``smm=None``.
    """
    pts = sorted(
        ((float(r["smm_train_cum"]), float(r["test_accuracy"])) for r in rows
         if r.get("test_accuracy") not in (None, "") and not math.isnan(float(r["test_accuracy"]))),
        key=lambda p: p[0],
    )
    if best is None:
        best = max((a for _, a in pts), default=float("nan"))
    out = []
    for eps in levels:
        threshold = best * (1.0 - eps)
        hit = next((s for s, a in pts if a >= threshold), None)
        out.append({"level": eps, "threshold": threshold, "smm": None if hit is None else int(hit),
                    "reached": hit is not None})
    return out


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.6g}"
    return "" if v is None else str(v)


class MetricsWriter:
    """Append-only CSV writer for the per-eval-point metrics schema."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRICS_COLUMNS)

    def write(self, row: dict) -> None:
        missing = set(METRICS_COLUMNS) - set(row)
        if missing:
            raise KeyError(f"metrics row missing columns {sorted(missing)}")
        self._w.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != METRICS_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics header {tuple(rows[0].keys())}")
    return rows
