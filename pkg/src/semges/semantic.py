"""Text-semantic encoder, coherence loss and relevance loss."""

from __future__ import annotations

import numpy as np

from .core import Conv1d, Module, ShapeError, Tensor, make_op
from .core import functional as F
from .data import TEXT_DIM, RelevanceTrack

DEFAULT_ALPHA = 0.01


class DegenerateInputError(ValueError):
    """Cosine similarity is undefined for a zero-norm operand."""


class SemanticEncoder(Module):
    """Maps frame-level text features ``[T, d_s]`` onto the prior latent grid ``[T', d_z]``."""

    def __init__(
        self,
        text_dim: int = TEXT_DIM,
        latent_dim: int = 32,
        hidden: int = 64,
        downsample: int = 2,
        seed: int = 0,
    ):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.text_dim = text_dim
        self.conv1 = Conv1d(text_dim, hidden, rng, stride=downsample)
        self.conv2 = Conv1d(hidden, latent_dim, rng)

    def __call__(self, features) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim != 2 or x.shape[1] != self.text_dim:
            raise ShapeError(f"text features must be [T, {self.text_dim}], got {x.shape}")
        return self.conv2(F.silu(self.conv1(x)))


def encode_semantics(enc: SemanticEncoder, features) -> Tensor:
    return enc(features)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine between the two tensors flattened to single vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine operands differ: {a.shape} vs {b.shape}")
    na = float(np.sqrt(np.sum(a.data * a.data)))
    nb = float(np.sqrt(np.sum(b.data * b.data)))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm tensor is undefined")
    dot = F.sum(a * b)
    return dot / F.sqrt(F.sum(F.square(a)) * F.sum(F.square(b)))


def coherence_loss(z_hands: Tensor, z_body: Tensor, z_sem: Tensor) -> Tensor:
    """``1 - cos(Z_h, Z_s) + 1 - cos(Z_b, Z_s)``, in ``[0, 4]``.

    ``z_hands``/``z_body`` are outputs of frozen encoders; only ``z_sem``'s
    producer should receive gradient.
    """
    for name, z in (("hands", z_hands), ("body", z_body)):
        if z.shape != z_sem.shape:
            raise ShapeError(f"{name} latents {z.shape} vs semantic latents {z_sem.shape}")
    return (1.0 - cosine_similarity(z_hands, z_sem)) + (1.0 - cosine_similarity(z_body, z_sem))


def psi(err, alpha: float = DEFAULT_ALPHA) -> Tensor:
    """Elementwise quadratic-then-linear penalty with knee at ``alpha``."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    err = err if isinstance(err, Tensor) else Tensor(err)
    e = err.data
    inside = np.abs(e) < alpha
    out = np.where(inside, 0.5 * e * e, alpha * (np.abs(e) - 0.5 * alpha))
    slope = np.where(inside, e, alpha * np.sign(e))
    return make_op(out, (err,), lambda g: (g * slope,), "psi")


def relevance_loss(
    target, generated: Tensor, relevance: RelevanceTrack | np.ndarray, alpha: float = DEFAULT_ALPHA
) -> Tensor:
    """Mean over all elements of ``lambda_t * psi(G - G_hat)``; lambda broadcasts over channels."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if target.shape != generated.shape or target.ndim != 2:
        raise ShapeError(f"target {target.shape} and generated {generated.shape} must match as [T, C]")
    lam = relevance.weights if isinstance(relevance, RelevanceTrack) else np.asarray(relevance, dtype=np.float64)
    if lam.shape != (target.shape[0],):
        raise ShapeError(f"relevance track of {lam.shape} for {target.shape[0]} frames")
    if np.any(lam < 0):
        raise ValueError("relevance weights must be non-negative")
    return F.mean(psi(target - generated, alpha) * lam[:, None])
