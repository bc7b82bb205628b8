"""Dataset read/write on top of the SGDS container."""

from __future__ import annotations

import os

import numpy as np

from .container import DATASET_MAGIC, read_container, write_container
from .types import (
    BODY_JOINTS,
    HAND_JOINTS,
    ROT6D,
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

_FIELDS = ("hands", "body", "audio", "text", "relevance")


def _manifest_header(m: DatasetManifest) -> dict:
    return {
        "kind": "dataset",
        "version": m.version,
        "frame_rate": m.frame_rate,
        "n_speakers": m.n_speakers,
        "dims": {
            "hand_joints": HAND_JOINTS,
            "body_joints": BODY_JOINTS,
            "rot6d": ROT6D,
            "audio": m.audio_dim,
            "text": m.text_dim,
        },
        "has_relevance": m.has_relevance,
        "entries": [
            {"clip_id": e.clip_id, "speaker_id": e.speaker_id, "split": e.split, "frames": e.frames}
            for e in m.entries
        ],
    }


def write_dataset(dataset: Dataset, path: str | os.PathLike) -> DatasetManifest:
    """Write ``dataset``; returns the manifest with payload offsets filled in."""
    dataset.validate()
    arrays = []
    for s in dataset.samples:
        if "/" in s.clip_id:
            raise DataValidationError("clip ids may not contain '/'", s.clip_id)
        f = s.features
        arrays += [
            (f"{s.clip_id}/hands", s.hands.rotations),
            (f"{s.clip_id}/body", s.body.rotations),
            (f"{s.clip_id}/audio", f.audio),
            (f"{s.clip_id}/text", f.text),
        ]
        if f.relevance is not None:
            arrays.append((f"{s.clip_id}/relevance", f.relevance.weights))
    header = write_container(path, DATASET_MAGIC, _manifest_header(dataset.manifest), arrays)
    offsets = {rec["name"]: rec["offset"] for rec in header["arrays"]}
    for e in dataset.manifest.entries:
        e.offsets = {k: offsets[f"{e.clip_id}/{k}"] for k in _FIELDS if f"{e.clip_id}/{k}" in offsets}
    return dataset.manifest


def read_dataset(path: str | os.PathLike) -> Dataset:
    """Read and validate a dataset. Raises on any checksum, version or invariant failure."""
    header, arrays = read_container(path, DATASET_MAGIC)
    if header.get("kind") != "dataset":
        raise DataValidationError(f"container holds {header.get('kind')!r}, not a dataset")
    dims = header["dims"]
    if (dims["hand_joints"], dims["body_joints"], dims["rot6d"]) != (HAND_JOINTS, BODY_JOINTS, ROT6D):
        raise DataValidationError(f"unsupported joint layout {dims}")
    offsets = {rec["name"]: rec["offset"] for rec in header["arrays"]}
    entries = [
        ManifestEntry(
            clip_id=e["clip_id"],
            speaker_id=int(e["speaker_id"]),
            split=e["split"],
            frames=int(e["frames"]),
            offsets={k: offsets[f"{e['clip_id']}/{k}"] for k in _FIELDS if f"{e['clip_id']}/{k}" in offsets},
        )
        for e in header["entries"]
    ]
    manifest = DatasetManifest(
        entries=entries,
        n_speakers=int(header["n_speakers"]),
        frame_rate=float(header["frame_rate"]),
        audio_dim=int(dims["audio"]),
        text_dim=int(dims["text"]),
        has_relevance=bool(header["has_relevance"]),
        version=int(header["version"]),
    )
    manifest.validate()

    samples = []
    for e in entries:
        cid = e.clip_id
        try:
            arr = {k: arrays[f"{cid}/{k}"] for k in _FIELDS if f"{cid}/{k}" in arrays}
            missing = {"hands", "body", "audio", "text"} - set(arr)
            if missing:
                raise DataValidationError(f"missing arrays {sorted(missing)}", cid)
            rel = RelevanceTrack(arr["relevance"]) if "relevance" in arr else None
            samples.append(
                Sample(
                    clip_id=cid,
                    hands=MotionClip(Part.HANDS, arr["hands"], manifest.frame_rate),
                    body=MotionClip(Part.BODY, arr["body"], manifest.frame_rate),
                    features=FeatureBundle(arr["audio"], arr["text"], e.speaker_id, rel),
                )
            )
        except DataValidationError as exc:
            if exc.clip_id is None:
                raise DataValidationError(str(exc), cid) from None
            raise
    return Dataset(manifest, samples)


def float32_exact(x: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 value, returned as float64."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)
