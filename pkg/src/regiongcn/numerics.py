"""Numerical substrate: dense/sparse kernels, activations, Adam, seeded RNG.

All floating point work in this package is 64-bit. Dense matrices are plain
numpy arrays in row-major order; sparse matrices are scipy CSR. The aliases
below are the vocabulary the rest of the package is written in.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

DenseMatrix = np.ndarray
SparseRowMatrix = sp.csr_matrix

ACTIVATIONS = ("relu", "sigmoid", "identity")


def as_dense(values) -> DenseMatrix:
    """Coerce to a float64 array, rejecting non-finite entries."""
    a = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("dense matrix contains non-finite entries")
    return a


def spmm(a: SparseRowMatrix, x: DenseMatrix) -> DenseMatrix:
    """Sparse-times-dense product a @ x."""
    if a.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {x.shape}")
    return np.asarray(a @ x)


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Dense product a @ b with an explicit shape check."""
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def activation(x: DenseMatrix, kind: str) -> DenseMatrix:
    """Elementwise relu, sigmoid or identity."""
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "identity":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(x: DenseMatrix, kind: str) -> DenseMatrix:
    """Derivative of `activation` evaluated at the pre-activation x.

    The relu derivative at exactly 0 is defined as 0.
    """
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "sigmoid":
        s = expit(x)
        return s * (1.0 - s)
    if kind == "identity":
        return np.ones_like(x, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param, beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        z = np.zeros_like(np.asarray(param, dtype=np.float64))
        return cls(m=z.copy(), v=z.copy(), t=0, beta1=beta1, beta2=beta2,
                   epsilon=epsilon)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, weight_decay: float = 0.0):
    """One Adam update with coupled L2 (decay folded into the gradient).

    Pure: returns (new_param, new_state) and leaves the inputs untouched.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    g = grad + weight_decay * param
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_param, AdamState(m=m, v=v, t=t, beta1=state.beta1,
                                beta2=state.beta2, epsilon=state.epsilon)


class Prng:
    """Seedable PCG64 stream with labeled, independent sub-streams.

    All randomness in the package hangs off one master seed. Sub-streams are
    derived from (seed, label path), so adding a new consumer of randomness
    never perturbs the draws of existing ones. Identical seed and labels give
    an identical stream on every platform.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._path)))

    def substream(self, label: str) -> "Prng":
        return Prng(self.seed, self._path + (zlib.crc32(label.encode("utf-8")),))

    def __repr__(self):
        return f"Prng(seed={self.seed}, path={self._path})"
