"""Continuous Hopfield associative memory used to initialize neuron states.

One memory per initialized layer. With ``H`` heads the embedding columns of
``Q``, ``K`` and ``b`` are split into ``H`` equal blocks; head ``j`` attends
with ``A_j = softmax(delta * (o @ Q_j + b_j) @ K_j.T)`` and retrieval sums the
heads, ``sum_j A_j @ V_j``. Stacking the heads gives ``A @ V`` with
``A = [A_1 .. A_H]`` (n x H*p_H) and ``V`` (H*p_H x d_l), which is standard
multi-head attention with the value and output projections merged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import kaiming_uniform_init, pseudo_inverse, softmax_rows
from .smm import SMM_PER_RETRIEVAL, charge


@dataclass
class MemoryLayer:
    Q: np.ndarray  # (obs_dim, e_H)
    K: np.ndarray  # (p_H, e_H)
    V: np.ndarray  # (heads * p_H, d_l)
    b: np.ndarray  # (e_H,)
    delta: float
    heads: int = 1

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"inverse temperature must be non-negative, got {self.delta}")
        e = self.Q.shape[1]
        if self.heads < 1 or e % self.heads:
            raise ValueError(f"embedding width {e} is not divisible into {self.heads} heads")
        if self.K.shape[1] != e or self.b.shape != (e,) or self.V.shape[0] != self.heads * self.K.shape[0]:
            raise ValueError(
                f"inconsistent memory shapes Q{self.Q.shape} K{self.K.shape} V{self.V.shape} b{self.b.shape}"
                f" for {self.heads} heads"
            )

    def blocks(self) -> list[slice]:
        w = self.Q.shape[1] // self.heads
        return [slice(j * w, (j + 1) * w) for j in range(self.heads)]

    def params(self) -> list[np.ndarray]:
        return [self.Q, self.K, self.V, self.b]


class HopfieldMemory:
    def __init__(self, layers: dict[int, MemoryLayer], warm_started: bool = False):
        self.layers = dict(layers)
        self.warm_started = warm_started

    @classmethod
    def create(
        cls, obs_dim: int, layer_dims: dict[int, int], rng: np.random.Generator,
        n_patterns: int = 24, embed: int = 128, delta: float = 200.0, heads: int = 1, dtype=np.float64,
    ) -> "HopfieldMemory":
        layers = {}
        for l, d in sorted(layer_dims.items()):
            Q = kaiming_uniform_init(obs_dim, embed, rng).T.astype(dtype)
            K = kaiming_uniform_init(embed, n_patterns, rng).astype(dtype)
            V = kaiming_uniform_init(heads * n_patterns, d, rng).T.astype(dtype)
            layers[l] = MemoryLayer(Q, K, V, np.zeros(embed, dtype=dtype), float(delta), heads)
        return cls(layers)

    def params(self) -> list[np.ndarray]:
        return [p for l in sorted(self.layers) for p in self.layers[l].params()]

    def meta(self) -> dict:
        return {"layers": sorted(self.layers), "deltas": {str(l): m.delta for l, m in self.layers.items()},
                "heads": {str(l): m.heads for l, m in self.layers.items()},
                "dtype": np.dtype(self.layers[min(self.layers)].Q.dtype).name, "warm_started": self.warm_started}

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for l, m in self.layers.items():
            for name, p in zip("QKVb", m.params()):
                out[f"mem{l}.{name}"] = p
        return out

    @classmethod
    def from_parts(cls, meta: dict, tensors: dict) -> "HopfieldMemory":
        dt = np.dtype(meta.get("dtype", "float64"))
        layers = {}
        for l in meta["layers"]:
            parts = [tensors[f"mem{l}.{n}"].astype(dt) for n in "QKVb"]
            layers[int(l)] = MemoryLayer(*parts, delta=float(meta["deltas"][str(l)]),
                                          heads=int(meta.get("heads", {}).get(str(l), 1)))
        return cls(layers, warm_started=bool(meta.get("warm_started", True)))


def _layer(mem: HopfieldMemory, l: int) -> MemoryLayer:
    if l not in mem.layers:
        raise KeyError(f"no memory stored for layer {l}; have {sorted(mem.layers)}")
    return mem.layers[l]


def attention(mem: HopfieldMemory, o: np.ndarray, l: int) -> np.ndarray:
    """Stacked per-head softmax pattern weights A (n x heads*p_H) for observations ``o``."""
    m = _layer(mem, l)
    if o.ndim != 2 or o.shape[1] != m.Q.shape[0]:
        raise ValueError(f"observation shape {o.shape} does not match query width {m.Q.shape[0]}")
    return _head_softmax(m, o @ m.Q + m.b)


def _head_softmax(m: MemoryLayer, E: np.ndarray) -> np.ndarray:
    return np.concatenate([softmax_rows(m.delta * (E[:, s] @ m.K[:, s].T)) for s in m.blocks()], axis=1)


def retrieve(mem: HopfieldMemory, o: np.ndarray, l: int, ledger=None) -> np.ndarray:
    charge(ledger, "init", SMM_PER_RETRIEVAL)
    return attention(mem, o, l) @ _layer(mem, l).V


def memory_loss(mem: HopfieldMemory, o: np.ndarray, targets: dict[int, np.ndarray]) -> float:
    total = 0.0
    for l, h in targets.items():
        r = retrieve(mem, o, l) - h
        total += float(np.sum(r * r))
    return total


def memory_grads(mem: HopfieldMemory, o: np.ndarray, targets: dict[int, np.ndarray]):
    """Loss and gradients w.r.t. (Q, K, V, b) per layer, keyed like ``mem.layers``."""
    loss, grads = 0.0, {}
    for l, h in targets.items():
        m = _layer(mem, l)
        E = o @ m.Q + m.b
        A = _head_softmax(m, E)
        R = A @ m.V - h
        loss += float(np.sum(R * R))
        dR = 2.0 * R
        dV = A.T @ dR
        dA = dR @ m.V.T
        dE, dK = np.empty_like(E), np.empty_like(m.K)
        p = m.K.shape[0]
        for j, s in enumerate(m.blocks()):
            Aj, dAj = A[:, j * p:(j + 1) * p], dA[:, j * p:(j + 1) * p]
            dS = Aj * (dAj - np.sum(dAj * Aj, axis=1, keepdims=True))
            dE[:, s] = m.delta * (dS @ m.K[:, s])
            dK[:, s] = m.delta * (dS.T @ E[:, s])
        grads[l] = (o.T @ dE, dK, dV, dE.sum(axis=0))
    return loss, grads


def memory_update(mem: HopfieldMemory, o: np.ndarray, targets: dict[int, np.ndarray], optimizer) -> float:
    """One optimizer step on every stored (Q, K, V, b); delta stays fixed. Returns the pre-step loss."""
    loss, grads = memory_grads(mem, o, targets)
    if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for gs in grads.values() for g in gs):
        raise FloatingPointError("memory_update: non-finite loss or gradient")
    layers = sorted(grads)
    params = [p for l in layers for p in mem.layers[l].params()]
    flat = [g.astype(p.dtype, copy=False) for l in layers for g, p in zip(grads[l], mem.layers[l].params())]
    optimizer.step(params, flat)
    return loss


def warm_start_values(mem: HopfieldMemory, O: np.ndarray, fw_states: dict[int, np.ndarray]) -> HopfieldMemory:
    """Set each V_l to the least-squares solution of A_l V_l = fw_states[l]."""
    for l, h in fw_states.items():
        A = attention(mem, O, l).astype(np.float64)
        V = pseudo_inverse(A) @ np.asarray(h, dtype=np.float64)
        mem.layers[l].V[...] = V.astype(mem.layers[l].V.dtype)
    return mem
