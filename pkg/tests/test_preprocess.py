import math

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stimdetect.errors import EmptyVideo, EstimatorFailure, UndecodableVideo
from stimdetect.labels import ChunkLabel
from stimdetect.preprocess import (
    CHUNK_LEN,
    FrameSequence,
    VideoChunk,
    chunk_starts,
    extract_keypoints,
    label_chunk,
    list_chunks,
    load_chunk,
    make_chunks,
    preprocess_video,
    sample_and_resize,
    save_chunk,
)
from stimdetect.synthetic import BlobPoseEstimator, write_video

NC, AF, HB, SP = ChunkLabel


def _video(path, seconds, fps, size=(64, 48)):
    w, h = size
    n = int(round(seconds * fps))
    frames = np.zeros((n, 3, h, w), np.float32)
    for i in range(n):
        frames[i, :, :, : (i % w) + 1] = 1.0  # frame-specific pattern
    return write_video(path, frames, fps)


def _seq(n):
    return FrameSequence(np.random.default_rng(0).random((n, 3, 100, 100), dtype=np.float32))


@pytest.mark.parametrize("seconds,fps,expected", [(12, 30, 120), (4.0, 25, 40), (3, 10, 30), (2, 15, 20)])
def test_sample_counts_and_shape(tmp_path, seconds, fps, expected):
    seq = sample_and_resize(_video(tmp_path / "v.mp4", seconds, fps))
    assert seq.frames.shape == (expected, 3, 100, 100)
    assert seq.frames.dtype == np.float32
    assert 0.0 <= seq.frames.min() and seq.frames.max() <= 1.0
    assert seq.source_fps == 10


def test_sample_picks_nearest_source_frames(tmp_path):
    # At 30 fps source, tick k must take source frame 3k.
    n, fps = 30, 30
    frames = np.zeros((n, 3, 100, 100), np.float32)
    for i in range(n):
        frames[i] = i / (n - 1)
    seq = sample_and_resize(write_video(tmp_path / "ramp.avi", frames, fps))
    levels = seq.frames.mean(axis=(1, 2, 3))
    expected = np.array([3 * k / (n - 1) for k in range(10)])
    np.testing.assert_allclose(levels, expected, atol=0.03)


def test_sample_is_rgb(tmp_path):
    frames = np.zeros((10, 3, 100, 100), np.float32)
    frames[:, 0] = 1.0  # red
    seq = sample_and_resize(write_video(tmp_path / "red.avi", frames, 10))
    r, g, b = seq.frames[0].mean(axis=(1, 2))
    assert r > 0.8 and g < 0.2 and b < 0.2


def test_zero_frame_video(tmp_path):
    path = tmp_path / "empty.avi"
    w = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 30, (64, 64))
    w.release()
    with pytest.raises(EmptyVideo):
        sample_and_resize(path)
    (tmp_path / "zero.mp4").write_bytes(b"")
    with pytest.raises(EmptyVideo):
        sample_and_resize(tmp_path / "zero.mp4")


def test_undecodable(tmp_path):
    with pytest.raises(UndecodableVideo):
        sample_and_resize(tmp_path / "missing.mp4")
    (tmp_path / "junk.mp4").write_bytes(b"definitely not a video" * 50)
    with pytest.raises(UndecodableVideo):
        sample_and_resize(tmp_path / "junk.mp4")


def test_chunks_100_frames():
    chunks = make_chunks(_seq(100), 20)
    assert [c.start_frame for c in chunks] == [0, 20, 40, 60]
    assert all(c.data.shape == (40, 3, 100, 100) for c in chunks)


def test_chunks_exact_and_short():
    assert [c.start_frame for c in make_chunks(_seq(40))] == [0]
    assert make_chunks(_seq(39)) == []


def test_chunk_data_is_the_frame_slice():
    seq = _seq(75)
    for c in make_chunks(seq, 7):
        np.testing.assert_array_equal(c.data, seq.frames[c.start_frame : c.start_frame + 40])


def test_stride_must_be_positive():
    with pytest.raises(ValueError):
        make_chunks(_seq(50), 0)


@given(st.integers(0, 2000), st.integers(1, 100))
def test_chunk_count_formula(length, stride):
    expected = max(0, (length - CHUNK_LEN) // stride + 1) if length >= CHUNK_LEN else 0
    brute = [s for s in range(length) if s % stride == 0 and s + CHUNK_LEN <= length]
    assert len(chunk_starts(length, stride)) == expected == len(brute)


def test_label_chunk_examples():
    assert label_chunk([AF] * 30 + [NC] * 10) is AF
    assert label_chunk([NC] * 40) is NC
    assert label_chunk([AF] * 25 + [SP] * 15) is NC
    assert label_chunk([NC] * 11 + [HB] * 29) is NC
    with pytest.raises(ValueError):
        label_chunk([AF] * 39)


def test_make_chunks_labels_consistent():
    labels = [NC] * 30 + [AF] * 50 + [SP] * 40
    for c in make_chunks(_seq(120), 10, labels):
        assert c.label is label_chunk(labels[c.start_frame : c.start_frame + 40])


class _Fixed:
    def __init__(self, out):
        self.out = np.asarray(out, np.float32)

    def __call__(self, image):
        return self.out


class _Scripted:
    """Returns row ``t`` of a prepared (T, 17, 3) array on the t-th call."""

    def __init__(self, rows):
        self.rows, self.t = rows, 0

    def __call__(self, image):
        r = self.rows[self.t]
        self.t += 1
        return r


def _chunk(data=None):
    return VideoChunk(np.zeros((40, 3, 100, 100), np.float32) if data is None else data, 0)


def test_keypoints_identical_frames():
    est = BlobPoseEstimator()
    data = np.zeros((40, 3, 100, 100), np.float32)
    data[:, :, 30:60, 40:60] = 1.0
    kp = extract_keypoints(_chunk(data), est)
    assert kp.coords.shape == (40, 17, 2) and kp.confidence.shape == (40, 17)
    assert kp.flat().shape == (40, 34)
    assert (kp.coords == kp.coords[0]).all()


def test_low_confidence_first_frame_starts_centred():
    kp = extract_keypoints(_chunk(), _Fixed(np.column_stack([np.full(17, 0.9), np.full(17, 0.1), np.full(17, 0.1)])))
    assert np.allclose(kp.coords, 0.5)


def test_low_confidence_forward_fill():
    rows = np.zeros((40, 17, 3), np.float32)
    rows[:, :, 0] = np.linspace(0, 1, 40)[:, None]
    rows[:, :, 1] = 0.25
    rows[:, :, 2] = 0.9
    rows[5:8, 3, 2] = 0.19  # joint 3 drops out for three frames
    kp = extract_keypoints(_chunk(), _Scripted(rows))
    assert np.allclose(kp.coords[5:8, 3], kp.coords[4, 3])
    assert np.isclose(kp.coords[8, 3, 0], rows[8, 3, 0])
    assert np.isclose(kp.confidence[6, 3], 0.19)
    # 0.2 itself counts as confident
    rows[10, 0, 2] = 0.2
    kp = extract_keypoints(_chunk(), _Scripted(rows))
    assert np.isclose(kp.coords[10, 0, 0], rows[10, 0, 0])


def test_estimator_failure_reports_frame():
    def boom_at_7():
        calls = {"n": 0}

        def est(image):
            calls["n"] += 1
            if calls["n"] == 8:
                raise RuntimeError("model crashed")
            return np.full((17, 3), 0.5, np.float32)

        return est

    with pytest.raises(EstimatorFailure) as info:
        extract_keypoints(_chunk(), boom_at_7())
    assert info.value.frame_index == 7
    with pytest.raises(EstimatorFailure):
        extract_keypoints(_chunk(), _Fixed(np.zeros((12, 3))))


def test_chunk_store_round_trip(tmp_path):
    seq = _seq(60)
    chunk = make_chunks(seq, 20, [SP] * 60)[1]
    kp = extract_keypoints(chunk, BlobPoseEstimator(threshold=0.6))
    path = save_chunk(tmp_path, "vid_a", chunk, kp, cropped=chunk.data * 0.5)
    assert path.name == "vid_a__000020.npz"
    stored = load_chunk(path)
    assert stored.video_id == "vid_a" and stored.chunk.start_frame == 20 and stored.chunk.label is SP
    np.testing.assert_array_equal(stored.chunk.data, chunk.data)
    np.testing.assert_array_equal(stored.keypoints.coords, kp.coords)
    np.testing.assert_allclose(stored.cropped, chunk.data * 0.5)
    save_chunk(tmp_path, "vid_b", make_chunks(seq)[0])
    assert load_chunk(tmp_path / "vid_b__000000.npz").keypoints is None
    assert [p.name for p in list_chunks(tmp_path, {"vid_b"})] == ["vid_b__000000.npz"]
    assert len(list_chunks(tmp_path)) == 2


def test_preprocess_video_end_to_end(blob_video):
    labels = [NC] * 50 + [AF] * 45  # shorter than the stream: padded with no-class
    out = preprocess_video(blob_video, labels, BlobPoseEstimator())
    assert [c.start_frame for c, _ in out] == [0, 20, 40, 60]
    padded = labels + [NC] * 5
    for c, kp in out:
        assert c.label is label_chunk(padded[c.start_frame : c.start_frame + 40])
        assert kp.coords.shape == (40, 17, 2)
    assert out[-1][0].label is AF
