"""Long-sequence generation by overlapping clips, and motion export."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import no_grad
from .data import (
    CLIP_FRAMES,
    DATASET_MAGIC,
    MOTION_CHANNELS,
    FeatureBundle,
    float32_exact,
    orthonormalize_rot6d,
    read_container,
    write_container,
)
from .data.derivatives import derivatives
from .generator import GeneratorModel, generate_clip

DEFAULT_OVERLAP = 4


class SequenceTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class LongSequenceRequest:
    bundle: FeatureBundle
    model: GeneratorModel
    clip_length: int = CLIP_FRAMES
    overlap: int = DEFAULT_OVERLAP

    def __post_init__(self):
        if not 0 < self.overlap < self.clip_length:
            raise ValueError(f"overlap must lie in (0, {self.clip_length}), got {self.overlap}")
        if self.bundle.frames < self.clip_length:
            raise SequenceTooShortError(
                f"stream has {self.bundle.frames} frames, shorter than one clip ({self.clip_length})"
            )


@dataclass
class GestureOutput:
    motion: np.ndarray
    boundaries: list[int]
    """Output frame at which each clip's window starts."""
    clips: list[np.ndarray] = field(default_factory=list)
    """Per-clip motion after the seam overwrite."""
    provenance: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.motion.shape[0]


def clip_starts(total: int, length: int, overlap: int) -> list[int]:
    """Input start frame of each clip; the last clip is right-aligned to the stream end."""
    if total < length:
        raise SequenceTooShortError(f"stream of {total} frames is shorter than a clip ({length})")
    hop = length - overlap
    n = 1 + math.ceil((total - length) / hop)
    starts = [c * hop for c in range(n)]
    starts[-1] = total - length if n > 1 else 0
    return starts


def output_length(n_clips: int, length: int, overlap: int) -> int:
    return length + (n_clips - 1) * (length - overlap)


def partition(request: LongSequenceRequest) -> list[FeatureBundle]:
    return [
        request.bundle.window(s, request.clip_length)
        for s in clip_starts(request.bundle.frames, request.clip_length, request.overlap)
    ]


def stitch_generate(request: LongSequenceRequest, seed: int = 0) -> GestureOutput:
    """Generate clip by clip; each clip's first ``k`` frames are replaced by the previous clip's last ``k``."""
    k, length = request.overlap, request.clip_length
    clips: list[np.ndarray] = []
    with no_grad():
        for c, bundle in enumerate(partition(request)):
            m = generate_clip(request.model, bundle).motion.numpy()
            if c > 0:
                m[:k] = clips[-1][length - k :]
            clips.append(m)
    motion = np.concatenate([clips[0]] + [m[k:] for m in clips[1:]], axis=0)
    hop = length - k
    return GestureOutput(
        motion=motion,
        boundaries=[c * hop for c in range(len(clips))],
        clips=clips,
        provenance={
            "model": request.model.fingerprint(),
            "prior_hands": request.model.hands.fingerprint(),
            "prior_body": request.model.body.fingerprint(),
            "clip_length": length,
            "overlap": k,
            "seed": seed,
        },
    )


def seam_velocity_ratio(output: GestureOutput, overlap: int) -> float:
    """Max per-frame L1 velocity near seams divided by the sequence-wide max."""
    v, _ = derivatives(output.motion)
    speed = np.abs(v).sum(axis=1)
    peak = speed.max()
    if len(output.boundaries) < 2 or peak == 0.0:
        return 0.0
    near = np.zeros(len(speed), dtype=bool)
    for b in output.boundaries[1:]:
        near[max(0, b - overlap) : min(len(speed), b + 2 * overlap)] = True
    return float(speed[near].max() / peak)


# -- export -----------------------------------------------------------------

def _prepare(motion: np.ndarray) -> np.ndarray:
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 2 or motion.shape[1] != MOTION_CHANNELS:
        raise ValueError(f"motion must be [T, {MOTION_CHANNELS}], got {motion.shape}")
    return orthonormalize_rot6d(motion)


def write_motion_file(path: str | os.PathLike, outputs: Mapping[str, GestureOutput]) -> dict[str, np.ndarray]:
    """SGDS motion container; values are orthonormalised then stored at float32.

    Returns the exact arrays written, which ``read_motion_file`` reproduces bit for bit.
    """
    arrays, seqs, written = [], [], {}
    for seq_id, out in outputs.items():
        if "/" in seq_id:
            raise ValueError(f"sequence id {seq_id!r} may not contain '/'")
        stored = float32_exact(_prepare(out.motion))
        written[seq_id] = stored
        arrays.append((f"{seq_id}/motion", stored))
        seqs.append({"id": seq_id, "boundaries": list(map(int, out.boundaries)), "provenance": out.provenance})
    write_container(path, DATASET_MAGIC, {"kind": "motion", "sequences": seqs}, arrays)
    return written


def read_motion_file(path: str | os.PathLike) -> dict[str, GestureOutput]:
    header, arrays = read_container(path, DATASET_MAGIC)
    if header.get("kind") != "motion":
        raise ValueError(f"container holds {header.get('kind')!r}, not motion")
    return {
        s["id"]: GestureOutput(arrays[f"{s['id']}/motion"], s["boundaries"], [], s["provenance"])
        for s in header["sequences"]
    }


def export_motion(output: GestureOutput, path: str | os.PathLike, format: str = "sgds") -> np.ndarray:
    """Write one sequence as ``sgds`` or ``csv``; returns the exported values."""
    if format == "sgds":
        return write_motion_file(path, {"seq0": output})["seq0"]
    if format != "csv":
        raise ValueError(f"unknown export format {format!r}")
    motion = _prepare(output.motion)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"c{i}" for i in range(motion.shape[1])])
        for t, row in enumerate(motion):
            w.writerow([t] + [f"{v:.9g}" for v in row])
    return motion


def read_motion_csv(path: str | os.PathLike) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
