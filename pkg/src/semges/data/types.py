"""Motion clips, feature streams and the dataset manifest."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

ROT6D = 6
HAND_JOINTS = 38
BODY_JOINTS = 9
CLIP_FRAMES = 34
FRAME_RATE = 15.0
AUDIO_DIM = 768
TEXT_DIM = 300
SPLITS = ("train", "val", "test")


class DataValidationError(ValueError):
    """A clip, bundle or manifest violates its invariants."""

    def __init__(self, message: str, clip_id: str | None = None):
        super().__init__(f"[{clip_id}] {message}" if clip_id else message)
        self.clip_id = clip_id


class Part(str, enum.Enum):
    HANDS = "hands"
    BODY = "body"

    @property
    def joints(self) -> int:
        return HAND_JOINTS if self is Part.HANDS else BODY_JOINTS

    @property
    def channels(self) -> int:
        return self.joints * ROT6D


def _frozen_array(values, ndim: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DataValidationError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataValidationError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MotionClip:
    """Rot6D joint rotations ``[T, J*6]`` for one body part."""

    part: Part
    rotations: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        part = Part(self.part)
        object.__setattr__(self, "part", part)
        rot = _frozen_array(self.rotations, 2, f"{part.value} rotations")
        if rot.shape[0] < 1 or rot.shape[1] != part.channels:
            raise DataValidationError(
                f"{part.value} rotations must be [T, {part.channels}], got {rot.shape}"
            )
        object.__setattr__(self, "rotations", rot)

    @property
    def frames(self) -> int:
        return self.rotations.shape[0]

    @property
    def joints(self) -> int:
        return self.part.joints


@dataclass(frozen=True)
class RelevanceTrack:
    """Per-frame semantic relevance weights; zero marks an unannotated frame."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, 1, "relevance weights")
        if np.any(w < 0):
            raise DataValidationError("relevance weights must be non-negative")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class FeatureBundle:
    audio: np.ndarray
    text: np.ndarray
    speaker_id: int
    relevance: RelevanceTrack | None = None

    def __post_init__(self):
        audio = _frozen_array(self.audio, 2, "audio features")
        text = _frozen_array(self.text, 2, "text features")
        if audio.shape[0] != text.shape[0]:
            raise DataValidationError(
                f"audio has {audio.shape[0]} frames but text has {text.shape[0]}"
            )
        if self.relevance is not None and len(self.relevance) != audio.shape[0]:
            raise DataValidationError(
                f"relevance track has {len(self.relevance)} frames, features have {audio.shape[0]}"
            )
        if int(self.speaker_id) < 0:
            raise DataValidationError(f"speaker_id must be non-negative, got {self.speaker_id}")
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "speaker_id", int(self.speaker_id))

    @property
    def frames(self) -> int:
        return self.audio.shape[0]

    def window(self, start: int, length: int) -> FeatureBundle:
        stop = start + length
        if start < 0 or stop > self.frames:
            raise DataValidationError(f"window [{start}, {stop}) outside {self.frames} frames")
        rel = None if self.relevance is None else RelevanceTrack(self.relevance.weights[start:stop])
        return FeatureBundle(self.audio[start:stop], self.text[start:stop], self.speaker_id, rel)


@dataclass(frozen=True)
class Sample:
    """One clip: paired hand/body motion and the conditioning features."""

    clip_id: str
    hands: MotionClip
    body: MotionClip
    features: FeatureBundle

    def __post_init__(self):
        if self.hands.part is not Part.HANDS or self.body.part is not Part.BODY:
            raise DataValidationError("sample parts must be (hands, body)", self.clip_id)
        t = self.hands.frames
        if self.body.frames != t or self.features.frames != t:
            raise DataValidationError(
                f"frame counts disagree: hands {t}, body {self.body.frames}, "
                f"features {self.features.frames}",
                self.clip_id,
            )

    @property
    def frames(self) -> int:
        return self.hands.frames

    def clip(self, part: Part) -> MotionClip:
        return self.hands if Part(part) is Part.HANDS else self.body

    def motion(self) -> np.ndarray:
        """Hands then body along the channel axis, ``[T, 282]``."""
        return np.concatenate([self.hands.rotations, self.body.rotations], axis=1)


@dataclass
class ManifestEntry:
    clip_id: str
    speaker_id: int
    split: str
    frames: int
    offsets: dict[str, int] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    n_speakers: int
    frame_rate: float = FRAME_RATE
    audio_dim: int = AUDIO_DIM
    text_dim: int = TEXT_DIM
    has_relevance: bool = True
    version: int = 1

    def validate(self) -> None:
        if self.n_speakers < 1:
            raise DataValidationError(f"speaker count must be positive, got {self.n_speakers}")
        seen: set[str] = set()
        for e in self.entries:
            if e.clip_id in seen:
                raise DataValidationError("duplicate clip id", e.clip_id)
            seen.add(e.clip_id)
            if not 0 <= e.speaker_id < self.n_speakers:
                raise DataValidationError(
                    f"speaker_id {e.speaker_id} outside [0, {self.n_speakers})", e.clip_id
                )
            if e.split not in SPLITS:
                raise DataValidationError(f"unknown split tag {e.split!r}", e.clip_id)
            if e.frames < 1:
                raise DataValidationError(f"frame count {e.frames} must be positive", e.clip_id)

    def ids(self, split: str | None = None) -> list[str]:
        return [e.clip_id for e in self.entries if split is None or e.split == split]


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: list[Sample]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        m = self.manifest
        m.validate()
        if len(m.entries) != len(self.samples):
            raise DataValidationError(
                f"manifest lists {len(m.entries)} clips but {len(self.samples)} were given"
            )
        for entry, s in zip(m.entries, self.samples):
            if entry.clip_id != s.clip_id:
                raise DataValidationError(f"manifest order names {entry.clip_id}", s.clip_id)
            f = s.features
            if entry.frames != s.frames:
                raise DataValidationError(f"manifest frames {entry.frames} != {s.frames}", s.clip_id)
            if entry.speaker_id != f.speaker_id:
                raise DataValidationError("manifest speaker_id disagrees with features", s.clip_id)
            if f.audio.shape[1] != m.audio_dim or f.text.shape[1] != m.text_dim:
                raise DataValidationError(
                    f"feature dims ({f.audio.shape[1]}, {f.text.shape[1]}) != "
                    f"({m.audio_dim}, {m.text_dim})",
                    s.clip_id,
                )
            if m.has_relevance != (f.relevance is not None):
                raise DataValidationError("relevance presence disagrees with manifest", s.clip_id)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, tag: str) -> list[Sample]:
        tags = {e.clip_id: e.split for e in self.manifest.entries}
        return [s for s in self.samples if tags[s.clip_id] == tag]

    def by_id(self, clip_id: str) -> Sample:
        for s in self.samples:
            if s.clip_id == clip_id:
                return s
        raise KeyError(clip_id)
