"""Parameter containers and the layers used by the priors and the generator."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor


class FrozenModelError(RuntimeError):
    """A parameter-mutating call was made on a frozen module."""


class Module:
    """Ordered registry of parameters and submodules.

    Parameters are leaf tensors; registration order defines the canonical
    order used by optimizers, checkpoints and fingerprints.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}
        self._frozen = False

    def __setattr__(self, name, value):
        if isinstance(value, Module) and name != "_modules" and hasattr(self, "_modules"):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        object.__setattr__(self, name, t)
        return t

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True
        for m in self._modules.values():
            m.freeze()
        for p in self._params.values():
            p.requires_grad = False
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if self._frozen:
            raise FrozenModelError("cannot load parameters into a frozen module")
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            assign(p, arr)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def assign(p: Tensor, value: np.ndarray) -> None:
    """Rebind a leaf parameter's data (the only sanctioned mutation)."""
    if not p.requires_grad:
        raise FrozenModelError("parameter is frozen")
    arr = np.array(value, dtype=np.float64)
    if arr.shape != p.shape:
        raise ShapeError(f"assign: {arr.shape} != {p.shape}")
    if not np.all(np.isfinite(arr)):
        from .tensor import NonFiniteError

        raise NonFiniteError("assign: non-finite parameter values")
    arr.flags.writeable = False
    p.data = arr


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.param("weight", rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)))
        self.has_bias = bias
        if bias:
            self.param("bias", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        y = F.matmul(x, self.weight)
        return y + self.bias if self.has_bias else y


class Conv1d(Module):
    """Temporal convolution over ``[T, C]`` with zero padding ``kernel // 2``."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 1,
    ):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        fan_in = kernel * c_in
        self.param("weight", rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, c_out)))
        self.param("bias", np.zeros(c_out))

    def out_length(self, t: int) -> int:
        pad = self.kernel // 2
        return (t + 2 * pad - self.kernel) // self.stride + 1

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.c_in:
            raise ShapeError(f"Conv1d expects [T, {self.c_in}], got {x.shape}")
        cols = F.unfold_rows(x, self.kernel, self.stride, self.kernel // 2)
        return F.matmul(cols, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.param("gain", np.ones(d))
        self.param("bias", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias)


class AttentionBlock(Module):
    """Post-norm attention block with a position-wise feed-forward layer.

    With ``context=None`` it is self-attention; otherwise queries come from
    ``x`` and keys/values from ``context``.
    """

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 1, ff_mult: int = 2):
        super().__init__()
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff1 = Linear(d, ff_mult * d, rng)
        self.ff2 = Linear(ff_mult * d, d, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        ctx = x if context is None else context
        a = F.attention(self.q(x), self.k(ctx), self.v(ctx), heads=self.heads)
        h = self.norm1(x + self.o(a))
        return self.norm2(h + self.ff2(F.silu(self.ff1(h))))
