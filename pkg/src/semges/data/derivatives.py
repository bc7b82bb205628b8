"""Forward-difference velocity and acceleration with tail padding."""

from __future__ import annotations

import numpy as np

from ..core import Tensor, functional as F
from .types import DataValidationError, MotionClip


def _pad_tail(x: Tensor, target: int) -> Tensor:
    n = x.shape[0]
    if n == target:
        return x
    return F.concat([x] + [x[n - 1 : n]] * (target - n), axis=0)


def temporal_derivatives(x: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable ``(velocity, acceleration)`` of a ``[T, C]`` sequence.

    ``v_t = x_{t+1} - x_t`` and ``a_t = x_{t+2} - 2 x_{t+1} + x_t`` on the frames
    where they are defined; trailing frames repeat the last defined row.
    """
    t = x.shape[0]
    if t < 3:
        raise DataValidationError(f"derivatives need at least 3 frames, got {t}")
    v = x[1:] - x[:-1]
    a = v[1:] - v[:-1]
    return _pad_tail(v, t), _pad_tail(a, t)


def derivatives(clip: MotionClip | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration of a clip, shapes preserved."""
    rot = clip.rotations if isinstance(clip, MotionClip) else np.asarray(clip, dtype=np.float64)
    v, a = temporal_derivatives(Tensor(rot))
    return v.numpy(), a.numpy()
