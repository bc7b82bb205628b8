"""Central-difference gradient oracle.

The analytic gradient comes from ``backward``; the numeric one from
re-evaluating ``f`` at ``x +/- eps`` per coordinate. Stop-gradient operands
and discrete choices are recorded on the analytic pass and replayed on the
numeric ones, so the oracle differentiates the same surrogate function that
the backward rules describe.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .nn import assign
from .tape import record_decisions
from .tensor import NonFiniteError, Tensor, no_grad


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _scalar(value: Tensor) -> float:
    v = value.item()
    if not np.isfinite(v):
        raise NonFiniteError("gradient check: function returned a non-finite value")
    return v


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-6,
    coords: Sequence[int] | None = None,
) -> float:
    """Max over coordinates of ``|a - n| / max(1, |a|, |n|)``."""
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    with record_decisions() as tape:
        out = f(leaf)
        _scalar(out)
        out.backward()
    analytic = np.zeros(base.size) if leaf.grad is None else leaf.grad.reshape(-1)

    idx = range(base.size) if coords is None else coords
    flat = base.reshape(-1)
    errs = []
    for i in idx:
        vals = []
        for sign in (1.0, -1.0):
            pert = flat.copy()
            pert[i] += sign * eps
            with no_grad(), tape.replay():
                vals.append(_scalar(f(Tensor(pert.reshape(base.shape)))))
        numeric = (vals[0] - vals[1]) / (2.0 * eps)
        errs.append(_rel_err(analytic[i], numeric))
    return float(np.max(errs)) if errs else 0.0


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Gradient check of a closure against its model parameters.

    ``per_param`` limits the number of coordinates probed per tensor (chosen
    with a seeded generator); ``None`` probes every coordinate.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    with record_decisions() as tape:
        loss = loss_fn()
        _scalar(loss)
        loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()
        if per_param is None or per_param >= p.size:
            coords = np.arange(p.size)
        else:
            coords = np.sort(rng.choice(p.size, size=per_param, replace=False))
        original = p.data
        try:
            for i in coords:
                vals = []
                for sign in (1.0, -1.0):
                    pert = original.reshape(-1).copy()
                    pert[i] += sign * eps
                    assign(p, pert.reshape(p.shape))
                    with no_grad(), tape.replay():
                        vals.append(_scalar(loss_fn()))
                numeric = (vals[0] - vals[1]) / (2.0 * eps)
                worst = max(worst, float(_rel_err(analytic[i], numeric)))
        finally:
            assign(p, original)
            p.grad = None
    return worst
