"""Neuron initializations: random, zero, null, forward, average (hybrid) and memory.

Every function returns a new :class:`NeuronState`; clamped layers are
passed through untouched (same array objects, so bit-identical).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hopfield import HopfieldMemory, retrieve
from .model import NeuronState, PCNetwork, check_state, predict_layer
from .smm import charge

INIT_KINDS = ("random", "zero", "null", "forward", "average", "memory")
CLI_ALIASES = {"avg": "average", "mem": "memory"}


class InfeasibleInitError(ValueError):
    """Raised when forward initialization cannot exist for the clamp pattern."""


@dataclass
class InitStrategy:
    kind: str = "forward"
    a: float = 0.0           # random: mean
    b: float = 1.0           # random: variance
    m: int | None = None     # average: number of forward-initialized hidden layers
    memory_mode: str = "latent_only"

    def __post_init__(self):
        self.kind = CLI_ALIASES.get(self.kind, self.kind)
        if self.kind not in INIT_KINDS:
            raise ValueError(f"unknown init {self.kind!r}; expected one of {INIT_KINDS}")
        if self.b < 0:
            raise ValueError("random init variance must be >= 0")
        if self.memory_mode not in ("per_layer", "latent_only"):
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")

    def split(self, n_layers: int) -> int:
        m = default_split(n_layers) if self.m is None else int(self.m)
        if not 0 <= m <= n_layers - 1:
            raise ValueError(f"average split m={m} outside [0, {n_layers - 1}]")
        return m


def default_split(n_layers: int) -> int:
    return min(n_layers // 2 + 1, n_layers - 1)


def _free(net: PCNetwork, state: NeuronState) -> list[int]:
    check_state(net, state)
    return net.free_layers()


def _with(state: NeuronState, updates: dict[int, np.ndarray]) -> NeuronState:
    layers = list(state.layers)
    for l, h in updates.items():
        layers[l] = h
    return NeuronState(layers, 0, state.batch_index, state.labels)


def init_random(net: PCNetwork, state: NeuronState, a: float, b: float, rng: np.random.Generator) -> NeuronState:
    if b < 0:
        raise ValueError("variance must be >= 0")
    sd = np.sqrt(b)
    return _with(state, {
        l: (a + sd * rng.standard_normal(state.layers[l].shape)).astype(net.dtype) for l in _free(net, state)
    })


def init_zero(net: PCNetwork, state: NeuronState) -> NeuronState:
    return _with(state, {l: np.zeros_like(state.layers[l]) for l in _free(net, state)})


def _require_clamped_input(net: PCNetwork) -> None:
    if not net.clamp_input:
        raise InfeasibleInitError(
            "forward initialization needs every root node clamped to data, but the input "
            "layer h_0 is free; no forward sweep exists for this network"
        )


def init_forward(net: PCNetwork, state: NeuronState, ledger=None) -> NeuronState:
    _require_clamped_input(net)
    free = set(_free(net, state))
    charge(ledger, "init", net.n_layers)
    updates, h = {}, state.layers[0]
    for l in range(1, net.n_layers + 1):
        mu, _ = predict_layer(net, h, l)
        if l in free:
            updates[l] = mu
        h = mu
    return _with(state, updates)


def _forward_from(net, state, start: int, stop: int, rows=None) -> dict[int, np.ndarray]:
    """Predictions for layers start+1..stop, swept from the current h_start."""
    h = state.layers[start] if rows is None else state.layers[start][rows]
    out = {}
    for l in range(start + 1, stop + 1):
        h, _ = predict_layer(net, h, l)
        out[l] = h
    return out


def init_null(net: PCNetwork, state: NeuronState, carry: NeuronState | None, ledger=None,
              info: dict | None = None) -> NeuronState:
    free = _free(net, state)
    if carry is None or carry.batch_size != state.batch_size:
        if info is not None:
            info["fallback"] = "forward" if net.clamp_input else "zero"
        return init_forward(net, state, ledger) if net.clamp_input else init_zero(net, state)
    return _with(state, {l: carry.layers[l].copy() for l in free})


def class_means(h: np.ndarray, labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): h[labels == c].mean(axis=0) for c in np.unique(labels)}


def init_average(
    net: PCNetwork, state: NeuronState, carry: NeuronState | None, labels_prev, labels_now,
    m: int, ledger=None, info: dict | None = None,
) -> NeuronState:
    """Hybrid init: forward sweep for hidden layers l <= m, class means of the carry above.

    Class means use the actual per-class count (plain mean). Samples whose
    class is absent from the carry are forward-initialized instead.
    """
    L = net.n_layers
    if not 0 <= m <= L - 1:
        raise ValueError(f"average split m={m} outside [0, {L - 1}]")
    free = _free(net, state)
    if carry is None or labels_prev is None:
        if info is not None:
            info["fallback"] = "forward"
        return init_forward(net, state, ledger)
    _require_clamped_input(net)
    labels_prev = np.asarray(labels_prev)
    labels_now = np.asarray(labels_now)
    updates = {}
    if m > 0:
        charge(ledger, "init", m)
        updates.update(_forward_from(net, state, 0, m))
    avg_layers = [l for l in free if l > m]
    missing = ~np.isin(labels_now, labels_prev)
    for l in avg_layers:
        means = class_means(carry.layers[l], labels_prev)
        h = np.empty_like(state.layers[l])
        for c, mu in means.items():
            h[labels_now == c] = mu
        updates[l] = h
    if missing.any() and avg_layers:
        # continue the sweep for orphaned samples from the deepest forward layer
        charge(ledger, "init", L - 1 - m)
        tmp = _with(state, updates)
        fw = _forward_from(net, tmp, m, max(avg_layers), rows=missing)
        for l in avg_layers:
            updates[l][missing] = fw[l]
        if info is not None:
            info["fallback_samples"] = int(missing.sum())
    return _with(state, updates)


def init_memory(
    memory: HopfieldMemory, observations: np.ndarray, state: NeuronState, net: PCNetwork,
    mode: str = "latent_only", ledger=None,
) -> NeuronState:
    free = _free(net, state)
    if mode == "per_layer":
        updates = {}
        # retrievals for different layers run in parallel: one charge
        charge(ledger, "init", 2)
        for l in free:
            if l not in memory.layers:
                raise KeyError(f"per_layer memory init: no memory for free layer {l}")
            updates[l] = retrieve(memory, observations, l).astype(net.dtype)
        return _with(state, updates)
    if mode != "latent_only":
        raise ValueError(f"unknown memory mode {mode!r}")
    k = free[0]
    updates = {k: retrieve(memory, observations, k, ledger).astype(net.dtype)}
    last = max(free)
    charge(ledger, "init", last - k)
    updates.update(_forward_from(net, _with(state, updates), k, last))
    return _with(state, {l: h for l, h in updates.items() if l in free})


def initialize(
    strategy: InitStrategy, net: PCNetwork, state: NeuronState, *, carry=None, labels_prev=None,
    labels_now=None, memory=None, observations=None, rng=None, ledger=None, info=None,
) -> NeuronState:
    k = strategy.kind
    if k == "random":
        return init_random(net, state, strategy.a, strategy.b, rng if rng is not None else np.random.default_rng())
    if k == "zero":
        return init_zero(net, state)
    if k == "null":
        return init_null(net, state, carry, ledger, info)
    if k == "forward":
        return init_forward(net, state, ledger)
    if k == "average":
        return init_average(net, state, carry, labels_prev, labels_now, strategy.split(net.n_layers), ledger, info)
    if memory is None or observations is None:
        raise ValueError("memory init needs a memory and observations")
    return init_memory(memory, observations, state, net, strategy.memory_mode, ledger)
