import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semges.data import FeatureBundle
from semges.generator import generate_clip
from semges.longseq import (
    LongSequenceRequest,
    SequenceTooShortError,
    clip_starts,
    export_motion,
    output_length,
    read_motion_csv,
    read_motion_file,
    seam_velocity_ratio,
    stitch_generate,
)


def _stream(model, frames, seed=0, speaker=0):
    rng = np.random.default_rng(seed)
    return FeatureBundle(
        rng.normal(size=(frames, model.cfg.audio_dim)), rng.normal(size=(frames, model.cfg.text_dim)), speaker
    )


def _speaker_stream(samples):
    f = [s.features for s in samples]
    return FeatureBundle(np.concatenate([b.audio for b in f]), np.concatenate([b.text for b in f]), f[0].speaker_id)


def test_partition_examples():
    assert clip_starts(34, 34, 4) == [0]
    assert clip_starts(64, 34, 4) == [0, 30]
    assert clip_starts(70, 34, 4) == [0, 30, 36]
    with pytest.raises(SequenceTooShortError):
        clip_starts(20, 34, 4)


def test_request_validation(small_model):
    with pytest.raises(ValueError):
        LongSequenceRequest(_stream(small_model, 40), small_model, 34, 34)
    with pytest.raises(SequenceTooShortError):
        LongSequenceRequest(_stream(small_model, 20), small_model)


def test_two_clip_seam(small_model):
    out = stitch_generate(LongSequenceRequest(_stream(small_model, 64), small_model))
    assert out.frames == 64
    first = out.clips[0]
    assert np.array_equal(out.motion[30:34], first[30:34])
    assert np.array_equal(out.clips[1][:4], first[30:34])


def test_single_clip_is_plain_generation(small_model):
    b = _stream(small_model, 34, seed=3)
    out = stitch_generate(LongSequenceRequest(b, small_model))
    assert np.array_equal(out.motion, generate_clip(small_model, b).motion.data)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 16), st.data())
def test_length_and_seam_laws(small_model, length, data):
    k = data.draw(st.integers(1, length - 1))
    total = data.draw(st.integers(length, length + 3 * (length - k) + 5))
    out = stitch_generate(LongSequenceRequest(_stream(small_model, total, seed=total), small_model, length, k))
    c = 1 + math.ceil((total - length) / (length - k))
    assert len(out.clips) == c
    assert out.frames == output_length(c, length, k) == length + (c - 1) * (length - k)
    for i in range(1, c):
        b = out.boundaries[i]
        assert np.array_equal(out.clips[i][:k], out.clips[i - 1][length - k :])
        assert np.array_equal(out.motion[b : b + k], out.clips[i - 1][length - k :])


def test_stitching_is_deterministic(small_model):
    req = LongSequenceRequest(_stream(small_model, 90), small_model)
    a, b = stitch_generate(req, seed=4), stitch_generate(req, seed=4)
    assert np.array_equal(a.motion, b.motion) and a.provenance == b.provenance


def test_seam_velocity_bounded(small_model, small_data):
    same_speaker = [s for s in small_data.samples if s.features.speaker_id == 0][:4]
    out = stitch_generate(LongSequenceRequest(_speaker_stream(same_speaker), small_model))
    assert seam_velocity_ratio(out, 4) <= 2.0


def test_sgds_export_round_trip(small_model, tmp_path):
    out = stitch_generate(LongSequenceRequest(_stream(small_model, 64), small_model))
    written = export_motion(out, tmp_path / "m.sgds")
    back = read_motion_file(tmp_path / "m.sgds")["seq0"]
    assert np.array_equal(back.motion, written)
    assert back.boundaries == out.boundaries and back.provenance == out.provenance


def test_csv_export(small_model, tmp_path):
    out = stitch_generate(LongSequenceRequest(_stream(small_model, 64), small_model))
    written = export_motion(out, tmp_path / "m.csv", format="csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == out.frames + 1
    assert len(lines[1].split(",")) == 283
    assert np.allclose(read_motion_csv(tmp_path / "m.csv"), written, rtol=1e-8, atol=0)


def _orthonormal_error(m):
    blocks = np.asarray(m).reshape(len(m), -1, 6)
    u, v = blocks[..., :3], blocks[..., 3:]
    return max(
        np.abs((u * v).sum(-1)).max(),
        np.abs(np.linalg.norm(u, axis=-1) - 1).max(),
        np.abs(np.linalg.norm(v, axis=-1) - 1).max(),
    )


def test_exported_rot6d_is_orthonormal(small_model, tmp_path):
    out = stitch_generate(LongSequenceRequest(_stream(small_model, 34), small_model))
    assert _orthonormal_error(out.motion) > 1e-3  # raw decoder output is unconstrained
    values = export_motion(out, tmp_path / "m.csv", format="csv")
    assert _orthonormal_error(values) < 1e-9
    # stored files keep the property up to their own precision
    assert _orthonormal_error(read_motion_csv(tmp_path / "m.csv")) < 5e-9
    export_motion(out, tmp_path / "m.sgds")
    assert _orthonormal_error(read_motion_file(tmp_path / "m.sgds")["seq0"].motion) < 1e-6


def test_unknown_export_format(small_model, tmp_path):
    out = stitch_generate(LongSequenceRequest(_stream(small_model, 34), small_model))
    with pytest.raises(ValueError):
        export_motion(out, tmp_path / "m.bvh", format="bvh")
