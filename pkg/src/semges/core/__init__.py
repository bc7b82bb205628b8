"""Minimal float64 tensor engine with reverse-mode autodiff."""

from . import functional
from .gradcheck import grad_check, grad_check_params
from .nn import AttentionBlock, Conv1d, FrozenModelError, LayerNorm, Linear, Module, assign
from .optim import Adam, AdamState, adam_step
from .tape import record_decisions
from .tensor import NonFiniteError, ShapeError, Tensor, graph_nodes, make_op, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "AttentionBlock",
    "Conv1d",
    "FrozenModelError",
    "LayerNorm",
    "Linear",
    "Module",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "assign",
    "functional",
    "grad_check",
    "grad_check_params",
    "graph_nodes",
    "make_op",
    "no_grad",
    "record_decisions",
]
