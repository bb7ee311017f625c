"""Backpropagation baseline on the same layered architecture.

The default loss is 1/2 ||mu_L - y||^2 summed over the batch, which equals the
PC energy right after a forward initialization with the output clamped.
"""

from __future__ import annotations

import numpy as np

from .dynamics import DivergenceError
from .model import PCNetwork, predict_layer
from .numerics import softmax_rows
from .smm import bp_update_smm, charge

LOSSES = ("mse", "ce")


def bp_forward(net: PCNetwork, x: np.ndarray):
    hs, zs = [x], []
    for l in range(1, net.n_layers + 1):
        mu, z = predict_layer(net, hs[-1], l)
        hs.append(mu)
        zs.append(z)
    return hs, zs


def bp_loss(net: PCNetwork, x: np.ndarray, y: np.ndarray, loss: str = "mse") -> float:
    out = bp_forward(net, x)[0][-1]
    if loss == "mse":
        return 0.5 * float(np.sum((out - y) ** 2))
    if loss == "ce":
        p = softmax_rows(out)
        return -float(np.sum(y * np.log(np.clip(p, 1e-300, None))))
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def bp_gradients(net: PCNetwork, x: np.ndarray, y: np.ndarray, loss: str = "mse"):
    """Loss value and exact (dW, db) by reverse-mode chain rule."""
    hs, zs = bp_forward(net, x)
    out = hs[-1]
    if loss == "mse":
        value = 0.5 * float(np.sum((out - y) ** 2))
        d_out = out - y
    elif loss == "ce":
        p = softmax_rows(out)
        value = -float(np.sum(y * np.log(np.clip(p, 1e-300, None))))
        d_out = p * y.sum(axis=1, keepdims=True) - y
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    L = net.n_layers
    gw, gb = [None] * L, [None] * L
    delta = d_out
    for l in range(L - 1, -1, -1):
        dz = delta * net.activations[l].deriv(zs[l])
        gw[l] = dz.T @ hs[l]
        gb[l] = dz.sum(axis=0)
        if l:
            delta = dz @ net.weights[l]
    return value, gw, gb


def bp_train_step(net: PCNetwork, x: np.ndarray, y: np.ndarray, optimizer, loss: str = "mse",
                  ledger=None) -> float:
    """One forward/backward/optimizer step; returns the pre-step loss."""
    value, gw, gb = bp_gradients(net, x, y, loss)
    if not np.isfinite(value):
        raise DivergenceError(f"BP loss is not finite ({value})")
    charge(ledger, "learning", bp_update_smm(net.n_layers))
    optimizer.step(net.params(), [*gw, *gb])
    return value
