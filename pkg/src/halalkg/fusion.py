"""Gated fusion of learnable entity vectors with numeric attribute vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .tensor import Tensor


@dataclass
class FusionParams:
    W_E: Tensor  # E x d
    W_N: Tensor  # N x d
    W: Tensor  # (E + N) x d

    @classmethod
    def init(cls, rng: np.random.Generator, embed_dim: int, numeric_dim: int, hidden: int):
        return cls(
            glorot(rng, embed_dim, hidden),
            glorot(rng, numeric_dim, hidden),
            glorot(rng, embed_dim + numeric_dim, hidden),
        )

    def named(self, prefix: str = "fusion") -> dict[str, Tensor]:
        return {f"{prefix}.W_E": self.W_E, f"{prefix}.W_N": self.W_N, f"{prefix}.W": self.W}


@dataclass
class InitialFeatures:
    """Per-entity inputs: learnable ``entity_embed`` and fixed ``numeric`` rows."""

    entity_embed: Tensor  # |V| x E
    numeric: np.ndarray  # |V| x N, zero where an entity has no attributes

    @classmethod
    def init(cls, rng: np.random.Generator, numeric: np.ndarray, embed_dim: int):
        bound = 1.0 / np.sqrt(embed_dim)
        h = rng.uniform(-bound, bound, size=(numeric.shape[0], embed_dim))
        return cls(Tensor(h, requires_grad=True), np.asarray(numeric, dtype=np.float64))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def fuse(params: FusionParams, h: Tensor, n) -> Tensor:
    """``alpha * beta + (1 - alpha) * h_hat`` with

    ``h_hat = h W_E``, ``alpha = sigmoid(h W_E + n W_N)`` and
    ``beta = tanh([h, n] W)``. Note that ``beta`` reads the raw inputs.
    """
    n = T.as_tensor(n)
    if h.ndim != 2 or n.ndim != 2 or h.shape[0] != n.shape[0]:
        raise ShapeMismatch(f"fuse: h {h.shape} and n {n.shape} need equal row counts")
    h_hat = h @ params.W_E
    n_hat = n @ params.W_N
    alpha = T.sigmoid(h_hat + n_hat)
    beta = T.tanh(T.concat([h, n], axis=1) @ params.W)
    return alpha * beta + (1.0 - alpha) * h_hat
