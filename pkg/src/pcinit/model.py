"""Layered predictive-coding network: predictions, errors and energy.

Conventions: states are row-major ``(n, d_l)`` batches; ``weights[l]`` has
shape ``(d_{l+1}, d_l)`` and maps layer ``l`` onto layer ``l + 1``, so the
prediction for layer ``l`` is ``act[l-1](h_{l-1} @ weights[l-1].T + biases[l-1])``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Activation, as_activation, bias_uniform_init, kaiming_uniform_init


@dataclass
class PCNetwork:
    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[Activation]
    clamp_input: bool = True
    clamp_output: bool = True

    def __post_init__(self):
        L = len(self.dims) - 1
        if L < 1:
            raise ValueError("a PCNetwork needs at least two layers (L >= 1)")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == L):
            raise ValueError("need exactly one weight, bias and activation per mapping")
        self.activations = [as_activation(a) for a in self.activations]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ValueError(
                    f"mapping {l}: weight {w.shape} / bias {b.shape} incompatible with "
                    f"dims {self.dims[l]} -> {self.dims[l + 1]}"
                )

    @property
    def n_layers(self) -> int:
        """L, the number of weight matrices."""
        return len(self.dims) - 1

    @property
    def dtype(self):
        return self.weights[0].dtype

    def clamped(self, l: int) -> bool:
        return (l == 0 and self.clamp_input) or (l == self.n_layers and self.clamp_output)

    def free_layers(self) -> list[int]:
        return [l for l in range(self.n_layers + 1) if not self.clamped(l)]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "PCNetwork":
        return PCNetwork(
            list(self.dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            list(self.activations), self.clamp_input, self.clamp_output,
        )

    @classmethod
    def create(
        cls,
        dims,
        activation: str | Activation = "tanh",
        rng: np.random.Generator | None = None,
        output_activation: str | Activation = "identity",
        clamp_input: bool = True,
        clamp_output: bool = True,
        dtype=np.float64,
    ) -> "PCNetwork":
        rng = np.random.default_rng() if rng is None else rng
        dims = [int(d) for d in dims]
        L = len(dims) - 1
        weights, biases = [], []
        for l in range(L):
            weights.append(kaiming_uniform_init(dims[l], dims[l + 1], rng).astype(dtype))
            biases.append(bias_uniform_init(dims[l], dims[l + 1], rng).astype(dtype))
        acts = [as_activation(activation)] * (L - 1) + [as_activation(output_activation)]
        return cls(dims, weights, biases, acts, clamp_input, clamp_output)


@dataclass
class NeuronState:
    layers: list[np.ndarray]
    step: int = 0
    batch_index: int = 0
    labels: np.ndarray | None = None  # class ids of the batch, kept for carried states

    @property
    def batch_size(self) -> int:
        return self.layers[0].shape[0]

    def copy(self) -> "NeuronState":
        return NeuronState([h.copy() for h in self.layers], self.step, self.batch_index, self.labels)


@dataclass
class ErrorState:
    """``errors[l-1]`` and ``preacts[l-1]`` belong to layer ``l`` (1..L)."""

    errors: list[np.ndarray]
    preacts: list[np.ndarray]
    layer_energy: list[float] = field(default_factory=list)


def make_state(net: PCNetwork, n: int, x=None, y=None, batch_index: int = 0) -> NeuronState:
    """Zero state for a batch of ``n`` with the clamped layers set to data."""
    dt = net.dtype
    layers = [np.zeros((n, d), dtype=dt) for d in net.dims]
    if net.clamp_input:
        if x is None:
            raise ValueError("input layer is clamped but no x was given")
        layers[0] = np.array(x, dtype=dt).reshape(n, net.dims[0])
    if net.clamp_output:
        if y is None:
            raise ValueError("output layer is clamped but no y was given")
        layers[-1] = np.array(y, dtype=dt).reshape(n, net.dims[-1])
    return NeuronState(layers, 0, batch_index)


def check_state(net: PCNetwork, state: NeuronState) -> None:
    if len(state.layers) != net.n_layers + 1:
        raise ValueError(f"state has {len(state.layers)} layers, net has {net.n_layers + 1}")
    n = state.layers[0].shape[0]
    for l, (h, d) in enumerate(zip(state.layers, net.dims)):
        if h.ndim != 2 or h.shape != (n, d):
            raise ValueError(f"layer {l}: state shape {h.shape}, expected ({n}, {d})")


def predict_layer(net: PCNetwork, h_prev: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Prediction ``mu_l`` of layer ``l`` from layer ``l - 1``; returns ``(mu, z)``."""
    if not 1 <= l <= net.n_layers:
        raise ValueError(f"layer index {l} outside 1..{net.n_layers}")
    w = net.weights[l - 1]
    if h_prev.ndim != 2 or h_prev.shape[1] != w.shape[1]:
        raise ValueError(f"layer {l}: input shape {h_prev.shape} does not match weight {w.shape}")
    z = h_prev @ w.T + net.biases[l - 1]
    return net.activations[l - 1](z), z


def forward(net: PCNetwork, x: np.ndarray, upto: int | None = None) -> list[np.ndarray]:
    """Forward sweep from ``x``; returns ``[h_0, mu_1, ..., mu_upto]``."""
    upto = net.n_layers if upto is None else upto
    hs = [x]
    for l in range(1, upto + 1):
        hs.append(predict_layer(net, hs[-1], l)[0])
    return hs


def compute_errors(net: PCNetwork, state: NeuronState) -> ErrorState:
    check_state(net, state)
    errors, preacts = [], []
    for l in range(1, net.n_layers + 1):
        mu, z = predict_layer(net, state.layers[l - 1], l)
        errors.append(state.layers[l] - mu)
        preacts.append(z)
    return ErrorState(errors, preacts, [0.5 * float(np.sum(e * e)) for e in errors])


def energy(errs: ErrorState) -> float:
    """F = 1/2 sum_l ||e_l||^2, summed over the batch."""
    return float(sum(0.5 * np.sum(e * e) for e in errs.errors))


def layer_energies(errs: ErrorState) -> list[float]:
    return [0.5 * float(np.sum(e * e)) for e in errs.errors]


def sample_energies(errs: ErrorState) -> np.ndarray:
    return 0.5 * sum(np.sum(e * e, axis=1) for e in errs.errors)
