"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import MissingGradient, ShapeMismatch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, lr: float, allow_missing: bool = False) -> None:
    """Update ``params`` in place from their ``.grad`` and advance ``state``.

    With ``allow_missing`` a parameter without a gradient (not reached by this
    step's loss) is left untouched, moments included; otherwise it raises
    :class:`MissingGradient`.
    """
    params = list(params)
    if not allow_missing:
        for i, p in enumerate(params):
            if p.grad is None:
                raise MissingGradient(f"parameter {i} {p.shape} has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("optimizer state tracks a different parameter list")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeMismatch(f"moment shape {m.shape} vs parameter {p.shape}")
        g = p.grad
        if g is None:
            continue
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
