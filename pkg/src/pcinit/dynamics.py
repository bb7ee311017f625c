"""Inference (neuron updates), learning (weight updates) and evaluation.

One training batch is: initialize neurons -> T synchronous gradient steps on
the energy over the free layers -> one optimizer step on the weights taken at
the post-inference state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hopfield import HopfieldMemory, memory_update, warm_start_values
from .inits import InfeasibleInitError, InitStrategy, init_zero, initialize
from .model import (
    ErrorState, NeuronState, PCNetwork, compute_errors, energy, forward, make_state,
)
from .optim import OptimizerSpec
from .smm import SMM_PER_INFERENCE_STEP, SMMLedger, charge


class DivergenceError(FloatingPointError):
    def __init__(self, msg: str, step: int | None = None):
        super().__init__(msg)
        self.step = step


@dataclass
class TrainConfig:
    T_train: int = 5
    T_eval: int = 5
    alpha: float = 0.1
    alpha_eval: float | None = None
    beta: float = 1e-3
    epochs: int = 16
    batch_size: int = 200
    optimizer: str = "adamw"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.T_train < 1 or self.T_eval < 0:
            raise ValueError("need T_train >= 1 and T_eval >= 0")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    @property
    def eval_alpha(self) -> float:
        return self.alpha if self.alpha_eval is None else self.alpha_eval

    def weight_optimizer(self):
        return OptimizerSpec(self.optimizer, self.beta, self.adam_betas, self.adam_eps, self.weight_decay).build()


@dataclass
class Batch:
    x: np.ndarray | None          # inputs clamped to h_0 (None for decoders)
    y: np.ndarray                 # targets clamped to h_L
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.y.shape[0]


def _scaled_errors(net: PCNetwork, errs: ErrorState) -> list[np.ndarray]:
    """e_{l+1} * act'(z_{l+1}) for l = 0..L-1."""
    return [e * a.deriv(z) for e, z, a in zip(errs.errors, errs.preacts, net.activations)]


def state_gradients(net: PCNetwork, state: NeuronState, errs: ErrorState) -> dict[int, np.ndarray]:
    """dF/dh_l for every free layer: e_l - (e_{l+1} * act'(z_{l+1})) @ W_l."""
    L = net.n_layers
    scaled = _scaled_errors(net, errs)
    grads = {}
    for l in net.free_layers():
        g = errs.errors[l - 1].copy() if l >= 1 else np.zeros_like(state.layers[0])
        if l < L:
            g -= scaled[l] @ net.weights[l]
        grads[l] = g
    return grads


def inference_step(net: PCNetwork, state: NeuronState, errs: ErrorState, alpha: float) -> NeuronState:
    grads = state_gradients(net, state, errs)
    layers = list(state.layers)
    for l, g in grads.items():
        layers[l] = state.layers[l] - alpha * g
    return NeuronState(layers, state.step + 1, state.batch_index, state.labels)


def run_inference(
    net: PCNetwork, state: NeuronState, T: int, alpha: float, ledger=None,
    errs: ErrorState | None = None, divergence_factor: float = 1e6,
) -> tuple[NeuronState, ErrorState, list[list[float]]]:
    """T inference steps. Returns the final state, its errors and the per-layer
    energy trajectory for t = 0..T."""
    if T < 1:
        raise ValueError(f"run_inference needs T >= 1, got {T}")
    errs = compute_errors(net, state) if errs is None else errs
    traj = [list(errs.layer_energy)]
    f0 = sum(traj[0])
    for t in range(T):
        state = inference_step(net, state, errs, alpha)
        charge(ledger, "inference", SMM_PER_INFERENCE_STEP)
        errs = compute_errors(net, state)
        traj.append(list(errs.layer_energy))
        f = sum(traj[-1])
        if not np.isfinite(f) or (f0 > 0 and f > divergence_factor * f0):
            raise DivergenceError(f"energy diverged at inference step {t + 1}: F={f:.4g} (F0={f0:.4g})", t + 1)
    return state, errs, traj


def weight_gradients(net: PCNetwork, state: NeuronState, errs: ErrorState):
    """dF/dW_l = -(e_{l+1} * act'(z_{l+1}))^T h_l, dF/db_l = -colsum(same)."""
    scaled = _scaled_errors(net, errs)
    gw = [-(s.T @ state.layers[l]) for l, s in enumerate(scaled)]
    gb = [-s.sum(axis=0) for s in scaled]
    return gw, gb


def weight_update(net: PCNetwork, state: NeuronState, errs: ErrorState, optimizer) -> PCNetwork:
    gw, gb = weight_gradients(net, state, errs)
    optimizer.step(net.params(), [*gw, *gb])
    return net


@dataclass
class BatchStats:
    energy_init: float
    energy_final: float
    trajectory: list[list[float]]
    fallback: str | None = None
    memory_loss: float | None = None
    info: dict = field(default_factory=dict)


def _memory_targets(memory: HopfieldMemory, state: NeuronState) -> dict[int, np.ndarray]:
    return {l: state.layers[l] for l in memory.layers}


def train_minibatch(
    net: PCNetwork, batch: Batch, strategy: InitStrategy, config: TrainConfig, ledger=None,
    carry: NeuronState | None = None, *, optimizer=None, memory: HopfieldMemory | None = None,
    memory_optimizer=None, rng: np.random.Generator | None = None, batch_index: int = 0,
) -> tuple[PCNetwork, NeuronState, BatchStats]:
    """Initialize, infer for ``config.T_train`` steps, update weights (and memory)."""
    if strategy.kind == "forward" and not net.clamp_input:
        raise InfeasibleInitError(
            "forward initialization requested on a network whose input layer is free: "
            "root nodes must be clamped for a forward sweep to exist"
        )
    if strategy.kind == "average" and batch.labels is None:
        raise ValueError("average initialization needs class labels")
    optimizer = optimizer if optimizer is not None else config.weight_optimizer()
    state = make_state(net, batch.size, batch.x, batch.y, batch_index)
    state.labels = batch.labels
    info: dict = {}
    if strategy.kind == "memory":
        if memory is None:
            raise ValueError("memory init needs a HopfieldMemory")
        obs = observations(batch)
        if not getattr(memory, "warm_started", False):
            # fit V to the forward-init states of the first batch; without a forward
            # sweep (free root layer) the initial V is kept as drawn
            if net.clamp_input:
                fw = initialize(InitStrategy("forward"), net, state, ledger=ledger)
                warm_start_values(memory, obs, _memory_targets(memory, fw))
            memory.warm_started = True
        state = initialize(strategy, net, state, memory=memory, observations=obs, ledger=ledger)
    else:
        state = initialize(
            strategy, net, state, carry=carry, labels_prev=None if carry is None else carry.labels,
            labels_now=batch.labels, rng=rng, ledger=ledger, info=info,
        )
    state, errs, traj = run_inference(net, state, config.T_train, config.alpha, ledger,
                                      divergence_factor=config.divergence_factor)
    weight_update(net, state, errs, optimizer)
    mem_loss = None
    if memory is not None and strategy.kind == "memory":
        targets = _memory_targets(memory, state)
        if memory_optimizer is None:
            memory_optimizer = OptimizerSpec("adamw", config.beta).build()
        mem_loss = memory_update(memory, observations(batch), targets, memory_optimizer)
    stats = BatchStats(sum(traj[0]), sum(traj[-1]), traj, info.get("fallback"), mem_loss, info)
    return net, state, stats


def observations(batch: Batch) -> np.ndarray:
    """Concatenated observation o = (x, y); decoders only observe y."""
    return batch.y if batch.x is None else np.concatenate([batch.x, batch.y], axis=1)


def predict_classes(net: PCNetwork, inputs: np.ndarray, chunk: int = 2000) -> np.ndarray:
    out = []
    for i in range(0, len(inputs), chunk):
        out.append(np.argmax(forward(net, inputs[i:i + chunk].astype(net.dtype, copy=False))[-1], axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def evaluate_classify(net: PCNetwork, inputs: np.ndarray, labels: np.ndarray, ledger=None) -> float:
    """Accuracy of argmax(mu_L) after one forward sweep (ties -> lowest class index)."""
    charge(ledger, "eval", net.n_layers)
    if len(inputs) == 0:
        return float("nan")
    return float(np.mean(predict_classes(net, inputs) == np.asarray(labels)))


def evaluate_reconstruct(
    net: PCNetwork, targets: np.ndarray, T_eval: int, alpha_eval: float, ledger=None,
    strategy: InitStrategy | None = None, memory: HopfieldMemory | None = None,
    rng: np.random.Generator | None = None, chunk: int = 2000,
) -> tuple[np.ndarray, float]:
    """Clamp targets to h_L, infer the free layers, decode h_0 forward; returns (recon, mse)."""
    strategy = strategy or InitStrategy("zero")
    if net.clamp_input or not net.clamp_output:
        raise ValueError("reconstruction needs a decoder: free h_0, clamped h_L")
    if strategy.kind == "forward":
        raise InfeasibleInitError(
            "forward initialization cannot exist for a decoder: its root layer h_0 is not clamped"
        )
    if strategy.kind == "average":
        raise ValueError("average initialization needs labels and is training-only")
    recon = []
    for i in range(0, len(targets), chunk):
        y = targets[i:i + chunk].astype(net.dtype, copy=False)
        state = make_state(net, len(y), y=y)
        kind = "zero" if strategy.kind == "null" else strategy.kind
        # chunks run side by side: charge the critical path once, all under "eval"
        local = SMMLedger()
        state = initialize(InitStrategy(kind, strategy.a, strategy.b, strategy.m, strategy.memory_mode),
                           net, state, memory=memory, observations=y, rng=rng, ledger=local)
        if T_eval > 0:
            state, _, _ = run_inference(net, state, T_eval, alpha_eval, local)
        local.charge("eval", net.n_layers)
        if i == 0:
            charge(ledger, "eval", local.total)
        recon.append(forward(net, state.layers[0])[-1])
    recon = np.concatenate(recon) if recon else np.zeros((0, net.dims[-1]))
    mse = float(np.mean((recon - targets) ** 2)) if len(targets) else float("nan")
    return recon, mse
