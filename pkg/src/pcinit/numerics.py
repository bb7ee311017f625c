"""Dense primitives shared by every other module.

Activations carry their exact derivatives (no autodiff anywhere in the
package). Random number generators are always passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

ACTIVATIONS = ("identity", "relu", "leaky_relu", "tanh", "gelu", "elu")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity with a closed-form derivative.

    ``slope`` is only read by ``leaky_relu``.
    """

    kind: str = "identity"
    slope: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {ACTIVATIONS}")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "identity":
            return z
        if k == "relu":
            return np.maximum(z, 0)
        if k == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if k == "tanh":
            return np.tanh(z)
        if k == "gelu":
            return 0.5 * z * (1.0 + erf(z / _SQRT2))
        # elu, alpha = 1
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))

    def deriv(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "identity":
            return np.ones_like(z)
        if k == "relu":
            return (z > 0).astype(z.dtype)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope).astype(z.dtype)
        if k == "tanh":
            t = np.tanh(z)
            return 1.0 - t * t
        if k == "gelu":
            cdf = 0.5 * (1.0 + erf(z / _SQRT2))
            return cdf + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0))).astype(z.dtype)

    @property
    def tag(self) -> str:
        return f"leaky_relu:{self.slope!r}" if self.kind == "leaky_relu" else self.kind

    @classmethod
    def from_tag(cls, tag: str) -> "Activation":
        if tag.startswith("leaky_relu:"):
            return cls("leaky_relu", float(tag.split(":", 1)[1]))
        return cls(tag)


def as_activation(a: Activation | str) -> Activation:
    return a if isinstance(a, Activation) else Activation.from_tag(a)


def _check_finite(z: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(z)):
        bad = np.argwhere(~np.isfinite(z))
        raise ValueError(
            f"{what}: non-finite input of shape {np.shape(z)}, "
            f"{len(bad)} bad entries, first at index {tuple(int(i) for i in bad[0])}"
        )


def activate(a: Activation | str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    _check_finite(z, "activate")
    return as_activation(a)(z)


def activate_deriv(a: Activation | str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    _check_finite(z, "activate_deriv")
    return as_activation(a).deriv(z)


def kaiming_uniform_init(
    fan_in: int, fan_out: int, rng: np.random.Generator, a: float = np.sqrt(5.0)
) -> np.ndarray:
    """(fan_out, fan_in) weight matrix, uniform with leaky-relu gain for slope ``a``.

    The default slope sqrt(5) reproduces the usual ``nn.Linear`` default,
    whose bound simplifies to 1/sqrt(fan_in).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    gain = np.sqrt(2.0 / (1.0 + a * a))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def bias_uniform_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=fan_out)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def pseudo_inverse(a: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose inverse via SVD, dropping singular values below rtol * s_max."""
    a = np.asarray(a, dtype=np.float64)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"pseudo_inverse: SVD did not converge for shape {a.shape}") from exc
    if s.size == 0:
        return np.zeros(a.T.shape)
    keep = s > rtol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T
