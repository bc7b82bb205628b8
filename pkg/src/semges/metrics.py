"""Objective gesture metrics: FGD, beat consistency, diversity and SRGR."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import ShapeError, no_grad
from .data import BODY_JOINTS, FRAME_RATE, HAND_JOINTS, ONSET_CHANNEL, ROT6D, RelevanceTrack
from .vqvae import MotionPrior, ensure_frozen

DEFAULT_SIGMA = 0.1
DEFAULT_DELTA = 0.1
SQRT_FLOOR = -1e-8
TOTAL_JOINTS = HAND_JOINTS + BODY_JOINTS


class MetricError(ValueError):
    pass


class NoMotionBeatsWarning(RuntimeWarning):
    pass


# -- FGD ----------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def embedding_stats(embeddings) -> EmbeddingStats:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"embeddings must be [N, d], got {x.shape}")
    if x.shape[0] < 2:
        raise MetricError(f"covariance needs at least 2 samples, got {x.shape[0]}")
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return EmbeddingStats(x.mean(axis=0), 0.5 * (cov + cov.T), x.shape[0])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() < SQRT_FLOOR * max(1.0, abs(w.max())):
        cond = abs(w.max()) / max(abs(w.min()), np.finfo(float).tiny)
        raise MetricError(
            f"covariance product is not positive semidefinite (min eigenvalue {w.min():.3e}, "
            f"condition estimate {cond:.3e})"
        )
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _checked_distance(mean_sq: float, trace_a: float, trace_b: float, cross: float) -> float:
    d = mean_sq + trace_a + trace_b - 2.0 * cross
    scale = max(1.0, mean_sq + trace_a + trace_b)
    if d < SQRT_FLOOR * scale:
        raise MetricError(f"Frechet distance {d:.3e} below numerical floor (scale {scale:.3e})")
    return max(float(d), 0.0)


def frechet_distance(a: EmbeddingStats, b: EmbeddingStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``.

    The square-root trace is taken from the symmetric product
    ``S_a^{1/2} S_b S_a^{1/2}``, which shares its eigenvalues with ``S_a S_b``.
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError(f"embedding widths differ: {a.mean.shape} vs {b.mean.shape}")
    ra = _psd_sqrt(a.cov)
    cross = float(np.trace(_psd_sqrt(ra @ b.cov @ ra)))
    mean_sq = float(np.sum((a.mean - b.mean) ** 2))
    return _checked_distance(mean_sq, float(np.trace(a.cov)), float(np.trace(b.cov)), cross)


def frechet_distance_from_samples(a, b) -> float:
    """Frechet distance of the Gaussians fitted to two sample sets.

    With centred samples ``X_a`` and ``X_b`` the nonzero eigenvalues of
    ``S_a S_b`` are the squared singular values of
    ``X_a X_b^T / sqrt((n_a - 1)(n_b - 1))``, so the square-root trace is
    that matrix's nuclear norm. Working in sample space avoids taking square
    roots of rounding noise in the null space when embeddings are wider than
    the sample count.
    """
    xa, xb = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (a, b))
    if xa.shape[1] != xb.shape[1]:
        raise ShapeError(f"embedding widths differ: {xa.shape[1]} vs {xb.shape[1]}")
    if min(len(xa), len(xb)) < 2:
        raise MetricError("covariance needs at least 2 samples per side")
    ca, cb = xa - xa.mean(axis=0), xb - xb.mean(axis=0)
    na, nb = len(xa) - 1, len(xb) - 1
    try:
        sv = np.linalg.svd(ca @ cb.T, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"singular value decomposition failed: {exc}") from exc
    cross = float(sv.sum()) / np.sqrt(na * nb)
    mean_sq = float(np.sum((xa.mean(axis=0) - xb.mean(axis=0)) ** 2))
    return _checked_distance(mean_sq, float(np.sum(ca * ca)) / na, float(np.sum(cb * cb)) / nb, cross)


class MotionEmbedder:
    """Flattened latents of the frozen hand and body encoders, concatenated."""

    def __init__(self, hands: MotionPrior, body: MotionPrior):
        ensure_frozen(hands)
        ensure_frozen(body)
        self.hands, self.body = hands, body

    def fingerprint(self) -> str:
        return f"{self.hands.fingerprint()}:{self.body.fingerprint()}"

    def __call__(self, motion: np.ndarray) -> np.ndarray:
        motion = _motion_array(motion)
        split = self.hands.part.channels
        with no_grad():
            zh = self.hands.encode(motion[:, :split]).data
            zb = self.body.encode(motion[:, split:]).data
        return np.concatenate([zh.ravel(), zb.ravel()])


def fgd(real_clips: Sequence, gen_clips: Sequence, embedder: MotionEmbedder) -> float:
    if len(real_clips) < 2 or len(gen_clips) < 2:
        raise MetricError("FGD needs at least 2 clips per side")
    return frechet_distance_from_samples([embedder(c) for c in real_clips], [embedder(c) for c in gen_clips])


# -- beat consistency ---------------------------------------------------------

def _motion_array(motion) -> np.ndarray:
    m = np.asarray(getattr(motion, "data", motion), dtype=np.float64)
    if m.ndim != 2 or m.shape[1] % ROT6D:
        raise ShapeError(f"motion must be [T, J*{ROT6D}], got {m.shape}")
    return m


def upper_body_mask(joints: int = TOTAL_JOINTS) -> np.ndarray:
    """Body joints only; the leading hand (finger) joints are excluded."""
    mask = np.zeros(joints, dtype=bool)
    mask[joints - BODY_JOINTS :] = True
    return mask


def motion_beat_times(motion, joint_mask=None, frame_rate: float = FRAME_RATE) -> np.ndarray:
    """Times of strict local minima of the masked aggregate L1 velocity."""
    m = _motion_array(motion)
    if m.shape[0] < 3:
        raise MetricError("beat detection needs at least 3 frames")
    joints = m.shape[1] // ROT6D
    mask = upper_body_mask(joints) if joint_mask is None else np.asarray(joint_mask, dtype=bool)
    if mask.shape != (joints,):
        raise ShapeError(f"joint mask of {mask.shape} for {joints} joints")
    per_joint = m.reshape(m.shape[0], joints, ROT6D)[:, mask]
    speed = np.abs(np.diff(per_joint, axis=0)).sum(axis=(1, 2))
    inner = (speed[1:-1] < speed[:-2]) & (speed[1:-1] < speed[2:])
    return (np.flatnonzero(inner) + 1) / frame_rate


def bc_from_times(audio_beats, motion_beats, sigma: float = DEFAULT_SIGMA) -> float:
    a = np.asarray(audio_beats, dtype=np.float64).ravel()
    m = np.asarray(motion_beats, dtype=np.float64).ravel()
    if a.size == 0:
        raise MetricError("beat consistency needs at least one audio beat")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if m.size == 0:
        warnings.warn("no motion beats detected; beat consistency is 0", NoMotionBeatsWarning, stacklevel=2)
        return 0.0
    nearest = np.min((a[:, None] - m[None, :]) ** 2, axis=1)
    return float(np.mean(np.exp(-nearest / (2.0 * sigma * sigma))))


def beat_consistency(
    motion, audio_beats, joint_mask=None, sigma: float = DEFAULT_SIGMA, frame_rate: float = FRAME_RATE
) -> float:
    return bc_from_times(audio_beats, motion_beat_times(motion, joint_mask, frame_rate), sigma)


def audio_beats_from_onsets(audio: np.ndarray, frame_rate: float = FRAME_RATE, threshold: float = 0.5) -> np.ndarray:
    """Beat times read from the onset channel of ingested audio features."""
    onset = np.asarray(audio, dtype=np.float64)[:, ONSET_CHANNEL]
    return np.flatnonzero(onset > threshold) / frame_rate


# -- diversity and SRGR -------------------------------------------------------

def diversity(gen_clips: Sequence) -> float:
    clips = [np.asarray(getattr(c, "data", c), dtype=np.float64) for c in gen_clips]
    if len(clips) < 2:
        raise MetricError("diversity needs at least 2 clips")
    shape = clips[0].shape
    if any(c.shape != shape for c in clips):
        raise ShapeError(f"clip shapes differ: {sorted({c.shape for c in clips})}")
    x = np.stack(clips).reshape(len(clips), -1)
    i, j = np.triu_indices(len(clips), k=1)
    return float(np.mean(np.abs(x[i] - x[j]).mean(axis=1)))


def srgr(real, gen, relevance, delta: float = DEFAULT_DELTA) -> float:
    """Relevance-weighted fraction of joints whose 6-D L1 error is below ``delta``."""
    g = _motion_array(real)
    h = _motion_array(gen)
    if g.shape != h.shape:
        raise ShapeError(f"real {g.shape} and generated {h.shape} differ")
    lam = relevance.weights if isinstance(relevance, RelevanceTrack) else np.asarray(relevance, dtype=np.float64)
    if lam.shape != (g.shape[0],):
        raise ShapeError(f"relevance track of {lam.shape} for {g.shape[0]} frames")
    if np.any(lam < 0):
        raise ValueError("relevance weights must be non-negative")
    if not np.any(lam > 0):
        raise MetricError("SRGR is undefined when every relevance weight is zero")
    joints = g.shape[1] // ROT6D
    err = np.abs(g - h).reshape(g.shape[0], joints, ROT6D).sum(axis=2)
    hits = (err < delta).sum(axis=1)
    return float(np.sum(lam * hits) / (joints * np.sum(lam)))


def srgr_pooled(reals: Sequence, gens: Sequence, tracks: Sequence, delta: float = DEFAULT_DELTA) -> float:
    """SRGR over several clips, pooling numerator and denominator."""
    num = den = 0.0
    for g, h, lam in zip(reals, gens, tracks, strict=True):
        w = lam.weights if isinstance(lam, RelevanceTrack) else np.asarray(lam, dtype=np.float64)
        if not np.any(w > 0):
            continue
        joints = np.shape(g)[1] // ROT6D
        num += srgr(g, h, w, delta) * joints * w.sum()
        den += joints * w.sum()
    if den == 0.0:
        raise MetricError("SRGR is undefined when every relevance weight is zero")
    return num / den


# -- report -------------------------------------------------------------------

@dataclass
class MetricReport:
    fgd: float | None = None
    bc: float | None = None
    diversity: float | None = None
    srgr: float | None = None
    parameters: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("fgd", "bc", "diversity", "srgr"):
            if out[key] is None:
                del out[key]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)
