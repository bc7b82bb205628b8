"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import FrozenModelError, assign
from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update. Returns new parameter arrays; ``state`` is advanced in place.

    A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p) or state.m[i].shape != np.shape(p):
            raise ShapeError(f"parameter {i}: shape {np.shape(p)} vs gradient {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


class Adam:
    """Adam over a fixed list of leaf tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise FrozenModelError("optimizer given a frozen parameter")
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        new, _ = adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
        for p, value in zip(self.params, new):
            assign(p, value)
