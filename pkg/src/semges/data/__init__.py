"""Motion/feature data model, SGDS container and synthetic data."""

from .container import (
    ChecksumError,
    DATASET_MAGIC,
    ContainerError,
    FormatError,
    PrecisionError,
    VersionError,
    read_container,
    write_container,
)
from .derivatives import derivatives, temporal_derivatives
from .io import float32_exact, read_dataset, write_dataset
from .rotation import axis_angle_to_matrix, matrix_to_rot6d, orthonormalize_rot6d
from .synth import ONSET_CHANNEL, split, split_sizes, synth_dataset
from .types import (
    AUDIO_DIM,
    BODY_JOINTS,
    CLIP_FRAMES,
    FRAME_RATE,
    HAND_JOINTS,
    ROT6D,
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

MOTION_CHANNELS = (HAND_JOINTS + BODY_JOINTS) * ROT6D
