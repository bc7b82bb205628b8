"""Rot6D helpers: axis-angle to Rot6D and Gram-Schmidt orthonormalisation."""

from __future__ import annotations

import numpy as np

from .types import ROT6D


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; ``[..., 3] -> [..., 3, 3]``."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    small = theta < 1e-12
    k = aa / np.where(small, 1.0, theta)[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack(
        [np.stack([zero, -kz, ky], -1), np.stack([kz, zero, -kx], -1), np.stack([-ky, kx, zero], -1)],
        axis=-2,
    )
    s, c = np.sin(theta)[..., None, None], np.cos(theta)[..., None, None]
    R = np.eye(3) + s * K + (1.0 - c) * (K @ K)
    return np.where(small[..., None, None], np.eye(3), R)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """First two columns of each rotation matrix, ``[..., 3, 3] -> [..., 6]``."""
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def orthonormalize_rot6d(x: np.ndarray) -> np.ndarray:
    """Gram-Schmidt each 6-value joint block of ``[T, J*6]`` into two orthonormal 3-vectors."""
    x = np.asarray(x, dtype=np.float64)
    t, c = x.shape
    if c % ROT6D:
        raise ValueError(f"channel count {c} is not a multiple of {ROT6D}")
    blocks = x.reshape(t, c // ROT6D, 2, 3)
    a, b = blocks[..., 0, :], blocks[..., 1, :]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    u = np.where(na > 1e-12, a / np.where(na > 1e-12, na, 1.0), np.array([1.0, 0.0, 0.0]))
    w = b - np.sum(u * b, axis=-1, keepdims=True) * u
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    # degenerate second vector: any unit vector orthogonal to u
    fallback = np.cross(u, np.where(np.abs(u[..., :1]) < 0.9, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]))
    fallback /= np.linalg.norm(fallback, axis=-1, keepdims=True)
    v = np.where(nw > 1e-12, w / np.where(nw > 1e-12, nw, 1.0), fallback)
    # a second pass removes the residual from the first projection
    v = v - np.sum(u * v, axis=-1, keepdims=True) * u
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return np.stack([u, v], axis=-2).reshape(t, c)
