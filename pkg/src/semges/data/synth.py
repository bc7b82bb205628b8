"""Deterministic synthetic co-speech data and dataset splitting.

Each speaker owns a rest pose, two rhythmic hand movements and a beat
movement of the body. Each clip mixes them with random phases and inserts one
of a small vocabulary of "semantic" gestures inside a contiguous window; that
window carries ``lambda = 1`` and the text features carry the gesture's word
embedding there. Audio features linearly encode the movement phases, and
audio channel 0 is an onset track that spikes on the frames where the body
beat movement turns around (its velocity minima).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import float32_exact
from .rotation import axis_angle_to_matrix, matrix_to_rot6d
from .types import (
    AUDIO_DIM,
    BODY_JOINTS,
    CLIP_FRAMES,
    FRAME_RATE,
    HAND_JOINTS,
    SPLITS,
    TEXT_DIM,
    Dataset,
    DatasetManifest,
    DataValidationError,
    FeatureBundle,
    ManifestEntry,
    MotionClip,
    Part,
    RelevanceTrack,
    Sample,
)

ONSET_CHANNEL = 0
N_SEMANTIC_GESTURES = 4
DEFAULT_RATIOS = (19.0, 2.0, 2.0)


@dataclass
class _Speaker:
    hand_rest: np.ndarray
    body_rest: np.ndarray
    hand_dirs: np.ndarray
    hand_freqs: np.ndarray
    body_dir: np.ndarray
    beat_freq: float


def _to_rot6d(aa: np.ndarray) -> np.ndarray:
    t, j, _ = aa.shape
    return matrix_to_rot6d(axis_angle_to_matrix(aa)).reshape(t, j * 6)


def synth_dataset(
    seed: int,
    n_clips: int,
    n_speakers: int,
    frames: int = CLIP_FRAMES,
    audio_dim: int = AUDIO_DIM,
    text_dim: int = TEXT_DIM,
    relevance: bool = True,
    ratios: tuple[float, ...] = DEFAULT_RATIOS,
    frame_rate: float = FRAME_RATE,
) -> Dataset:
    """Generate ``n_clips`` clips; identical ``seed`` gives bit-identical output."""
    if n_clips <= 0:
        raise DataValidationError(f"n_clips must be positive, got {n_clips}")
    if n_speakers <= 0:
        raise DataValidationError(f"n_speakers must be positive, got {n_speakers}")
    if frames < 16:
        raise DataValidationError(f"synthetic clips need at least 16 frames, got {frames}")
    if audio_dim < 8:
        raise DataValidationError(f"audio_dim must be at least 8, got {audio_dim}")
    rng = np.random.default_rng(seed)

    speakers = [
        _Speaker(
            hand_rest=rng.normal(0.0, 0.3, (HAND_JOINTS, 3)),
            body_rest=rng.normal(0.0, 0.3, (BODY_JOINTS, 3)),
            hand_dirs=rng.normal(0.0, 0.25, (2, HAND_JOINTS, 3)),
            hand_freqs=rng.uniform(0.4, 1.2, 2),
            body_dir=rng.normal(0.0, 0.3, (BODY_JOINTS, 3)),
            beat_freq=float(rng.uniform(0.8, 1.3)),
        )
        for _ in range(n_speakers)
    ]
    gesture_hands = rng.normal(0.0, 0.35, (N_SEMANTIC_GESTURES, HAND_JOINTS, 3))
    gesture_body = rng.normal(0.0, 0.1, (N_SEMANTIC_GESTURES, BODY_JOINTS, 3))
    word_vectors = rng.normal(0.0, 1.0, (N_SEMANTIC_GESTURES, text_dim))
    # audio channels 1.. are a fixed linear mix of 6 phase descriptors
    audio_mix = rng.normal(0.0, 1.0 / np.sqrt(6.0), (6, audio_dim - 1))

    t_sec = np.arange(frames) / frame_rate
    samples, entries = [], []
    for i in range(n_clips):
        speaker_id = i % n_speakers
        spk = speakers[speaker_id]
        phases = rng.uniform(0.0, 2.0 * np.pi, 3)
        amps = rng.uniform(0.7, 1.0, 3)

        hand_waves = amps[:2, None] * np.sin(2 * np.pi * spk.hand_freqs[:, None] * t_sec + phases[:2, None])
        beat_arg = 2 * np.pi * spk.beat_freq * t_sec + phases[2]
        beat_wave = amps[2] * np.cos(beat_arg)

        k = int(rng.integers(N_SEMANTIC_GESTURES))
        length = int(rng.integers(frames // 4, frames // 2 + 1))
        start = int(rng.integers(2, frames - length - 1))
        bump = np.zeros(frames)
        bump[start : start + length] = np.sin(np.pi * (np.arange(length) + 0.5) / length) ** 2

        hand_aa = (
            spk.hand_rest[None]
            + np.einsum("bt,bjc->tjc", hand_waves, spk.hand_dirs)
            + bump[:, None, None] * gesture_hands[k][None]
        )
        body_aa = (
            spk.body_rest[None]
            + beat_wave[:, None, None] * spk.body_dir[None]
            + bump[:, None, None] * gesture_body[k][None]
        )
        hands = float32_exact(_to_rot6d(hand_aa))
        body = float32_exact(_to_rot6d(body_aa))

        # velocity minima of the body beat sit where cos(beat_arg) turns around;
        # a forward difference centres that minimum half a frame early
        turn = np.arange(np.ceil((beat_arg[0]) / np.pi), np.floor(beat_arg[-1] / np.pi) + 1) * np.pi
        beat_frames = np.rint((turn - phases[2]) / (2 * np.pi * spk.beat_freq) * frame_rate - 0.5)
        beat_frames = beat_frames[(beat_frames >= 0) & (beat_frames < frames)].astype(int)
        onset = np.zeros(frames)
        onset[beat_frames] = 1.0

        descriptors = np.stack(
            [
                np.sin(2 * np.pi * spk.hand_freqs[0] * t_sec + phases[0]) * amps[0],
                np.cos(2 * np.pi * spk.hand_freqs[0] * t_sec + phases[0]) * amps[0],
                np.sin(2 * np.pi * spk.hand_freqs[1] * t_sec + phases[1]) * amps[1],
                np.cos(2 * np.pi * spk.hand_freqs[1] * t_sec + phases[1]) * amps[1],
                np.sin(beat_arg) * amps[2],
                np.cos(beat_arg) * amps[2],
            ],
            axis=1,
        )
        audio = np.concatenate(
            [onset[:, None], descriptors @ audio_mix + rng.normal(0.0, 0.05, (frames, audio_dim - 1))],
            axis=1,
        )
        text = rng.normal(0.0, 0.1, (frames, text_dim))
        in_window = np.zeros(frames, dtype=bool)
        in_window[start : start + length] = True
        text[in_window] += word_vectors[k]
        lam = in_window.astype(np.float64)

        clip_id = f"clip{i:05d}"
        bundle = FeatureBundle(
            float32_exact(audio),
            float32_exact(text),
            speaker_id,
            RelevanceTrack(lam) if relevance else None,
        )
        samples.append(
            Sample(
                clip_id,
                MotionClip(Part.HANDS, hands, frame_rate),
                MotionClip(Part.BODY, body, frame_rate),
                bundle,
            )
        )
        entries.append(ManifestEntry(clip_id, speaker_id, "train", frames))

    manifest = DatasetManifest(
        entries=entries,
        n_speakers=n_speakers,
        frame_rate=frame_rate,
        audio_dim=audio_dim,
        text_dim=text_dim,
        has_relevance=relevance,
    )
    if n_clips >= len(ratios):
        manifest = split(manifest, ratios, seed)
    return Dataset(manifest, samples)


def split_sizes(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    r = np.asarray(ratios, dtype=np.float64)
    if r.ndim != 1 or r.size == 0 or np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise ValueError(f"split ratios must all be positive, got {tuple(ratios)}")
    if n < r.size:
        raise ValueError(f"cannot split {n} clips into {r.size} parts")
    exact = n * r / r.sum()
    sizes = np.floor(exact).astype(int)
    order = sorted(range(r.size), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - int(sizes.sum())]:
        sizes[i] += 1
    return sizes.tolist()


def split(manifest: DatasetManifest, ratios: tuple[float, ...], seed: int) -> DatasetManifest:
    """Return a copy of ``manifest`` with train/val/test tags from a seeded shuffle."""
    if len(ratios) != len(SPLITS):
        raise ValueError(f"expected {len(SPLITS)} ratios, got {len(ratios)}")
    n = len(manifest.entries)
    sizes = split_sizes(n, tuple(ratios))
    order = np.random.default_rng(seed).permutation(n)
    tags = [""] * n
    pos = 0
    for tag, size in zip(SPLITS, sizes):
        for idx in order[pos : pos + size]:
            tags[idx] = tag
        pos += size
    entries = [
        ManifestEntry(e.clip_id, e.speaker_id, tag, e.frames, dict(e.offsets))
        for e, tag in zip(manifest.entries, tags)
    ]
    return DatasetManifest(
        entries=entries,
        n_speakers=manifest.n_speakers,
        frame_rate=manifest.frame_rate,
        audio_dim=manifest.audio_dim,
        text_dim=manifest.text_dim,
        has_relevance=manifest.has_relevance,
        version=manifest.version,
    )
