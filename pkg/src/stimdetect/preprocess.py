"""Video decoding, 40-frame chunking, chunk labels and pose keypoints."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np

from .errors import EmptyVideo, EstimatorFailure, UndecodableVideo
from .labels import ChunkLabel

log = logging.getLogger(__name__)

TARGET_FPS = 10
FRAME_SIZE = 100
CHUNK_LEN = 40
DEFAULT_STRIDE = 20
NUM_JOINTS = 17
MIN_JOINT_CONFIDENCE = 0.2
LABEL_QUORUM = 0.75


@dataclass
class FrameSequence:
    """Frames as a ``(N, 3, 100, 100)`` float32 array in [0, 1], RGB."""

    frames: np.ndarray
    source_fps: float = TARGET_FPS

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class VideoChunk:
    data: np.ndarray  # (40, 3, H, W) float32
    start_frame: int
    label: ChunkLabel | None = None


@dataclass
class KeypointSequence:
    coords: np.ndarray  # (40, 17, 2): normalized (x, y)
    confidence: np.ndarray  # (40, 17)

    def flat(self) -> np.ndarray:
        """The ``(40, 34)`` layout the recurrent layers consume."""
        return self.coords.reshape(len(self.coords), -1)


class PoseEstimator(Protocol):
    """Single-person pose estimator.

    Called with one ``(H, W, 3)`` RGB image in [0, 1], returns a ``(17, 3)``
    array of normalized ``(x, y, confidence)`` in COCO joint order.
    Implementations need not be thread-safe; the preprocessing harness builds
    one instance per worker.
    """

    def __call__(self, image: np.ndarray) -> np.ndarray: ...


def sample_and_resize(
    video_path: str | Path, fps: float = TARGET_FPS, size: int = FRAME_SIZE
) -> FrameSequence:
    """Decode a video at ``fps`` by taking the nearest source frame to every tick.

    Only the image stream is read, so audio is dropped.
    """
    path = str(video_path)
    if not Path(path).exists():
        raise UndecodableVideo(f"{path}: no such file")
    if Path(path).stat().st_size == 0:
        raise EmptyVideo(f"{path}: file is empty")
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise UndecodableVideo(f"{path}: cannot open")

    def prep(frame: np.ndarray) -> np.ndarray:
        img = cv2.resize(frame, (size, size), interpolation=cv2.INTER_AREA)
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB).transpose(2, 0, 1).astype(np.float32) / 255.0

    # Streamed: tick k takes source frame round(k * src_fps / fps), so only the
    # resized frames are ever held in memory.
    picked: list[np.ndarray] = []
    try:
        src_fps = cap.get(cv2.CAP_PROP_FPS)
        if not src_fps or not math.isfinite(src_fps) or src_fps <= 0:
            raise UndecodableVideo(f"{path}: stream reports no frame rate")
        ratio = src_fps / fps
        n_src = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            last = None
            while int(round(len(picked) * ratio)) <= n_src:
                if last is None:
                    last = prep(frame)
                picked.append(last)
            n_src += 1
    finally:
        cap.release()
    if n_src == 0:
        raise EmptyVideo(f"{path}: no decodable frames")
    n_out = int(math.floor(n_src / src_fps * fps + 1e-9))
    while len(picked) < n_out:
        # Nearest source index rounded past the end; clamp to the last frame.
        picked.append(picked[-1])
    out = np.stack(picked[:n_out]) if n_out else np.empty((0, 3, size, size), np.float32)
    return FrameSequence(out, source_fps=fps)


def chunk_starts(length: int, stride: int, chunk_len: int = CHUNK_LEN) -> range:
    return range(0, length - chunk_len + 1, stride)


def make_chunks(
    seq: FrameSequence,
    stride: int = DEFAULT_STRIDE,
    frame_labels: Sequence[ChunkLabel] | None = None,
) -> list[VideoChunk]:
    """Cut overlapping 40-frame windows; a trailing remainder is dropped.

    When ``frame_labels`` is given each chunk is labelled with ``label_chunk``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(seq) < CHUNK_LEN:
        log.warning("sequence has %d frames, fewer than one chunk", len(seq))
    chunks = []
    for start in chunk_starts(len(seq), stride):
        label = None
        if frame_labels is not None:
            label = label_chunk(frame_labels[start : start + CHUNK_LEN])
        chunks.append(VideoChunk(seq.frames[start : start + CHUNK_LEN], start, label))
    return chunks


def label_chunk(frame_labels: Sequence[ChunkLabel]) -> ChunkLabel:
    """Class held by at least 75% of the 40 frames, otherwise no-class."""
    if len(frame_labels) != CHUNK_LEN:
        raise ValueError(f"expected {CHUNK_LEN} frame labels, got {len(frame_labels)}")
    quorum = math.ceil(LABEL_QUORUM * CHUNK_LEN)
    label, count = Counter(frame_labels).most_common(1)[0]
    return ChunkLabel.parse(label) if count >= quorum else ChunkLabel.NO_CLASS


def _frame_image(chunk: VideoChunk, t: int) -> np.ndarray:
    return np.ascontiguousarray(chunk.data[t].transpose(1, 2, 0))


def extract_keypoints(chunk: VideoChunk, estimator: PoseEstimator) -> KeypointSequence:
    """Run the estimator on every frame of a chunk.

    Joints below 0.2 confidence keep the previous frame's position; on the
    first frame they sit at the image centre.
    """
    n = len(chunk.data)
    coords = np.empty((n, NUM_JOINTS, 2), dtype=np.float32)
    conf = np.empty((n, NUM_JOINTS), dtype=np.float32)
    prev = np.full((NUM_JOINTS, 2), 0.5, dtype=np.float32)
    for t in range(n):
        try:
            raw = np.asarray(estimator(_frame_image(chunk, t)), dtype=np.float32)
        except Exception as exc:
            raise EstimatorFailure(t, exc) from exc
        if raw.shape != (NUM_JOINTS, 3):
            raise EstimatorFailure(t, f"expected ({NUM_JOINTS}, 3) output, got {raw.shape}")
        xy = np.clip(raw[:, :2], 0.0, 1.0)
        c = np.clip(raw[:, 2], 0.0, 1.0)
        xy = np.where((c >= MIN_JOINT_CONFIDENCE)[:, None], xy, prev)
        coords[t], conf[t] = xy, c
        prev = xy
    return KeypointSequence(coords, conf)


# chunk store: <stem>.npz with arrays + <stem>.json sidecar


def save_chunk(
    directory: str | Path,
    video_id: str,
    chunk: VideoChunk,
    keypoints: KeypointSequence | None = None,
    cropped: np.ndarray | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"{video_id}__{chunk.start_frame:06d}"
    arrays = {"data": chunk.data.astype(np.float32)}
    if keypoints is not None:
        arrays["coords"] = keypoints.coords
        arrays["confidence"] = keypoints.confidence
    if cropped is not None:
        arrays["cropped"] = np.asarray(cropped, dtype=np.float32)
    path = directory / f"{stem}.npz"
    np.savez_compressed(path, **arrays)
    meta = {
        "video_id": video_id,
        "start_frame": chunk.start_frame,
        "label": chunk.label.value if chunk.label is not None else None,
        "has_keypoints": keypoints is not None,
        "has_crop": cropped is not None,
    }
    (directory / f"{stem}.json").write_text(json.dumps(meta), encoding="utf-8")
    return path


@dataclass
class StoredChunk:
    video_id: str
    chunk: VideoChunk
    keypoints: KeypointSequence | None
    cropped: np.ndarray | None = None  # prefetch-cropped frames, when stored


def load_chunk(path: str | Path) -> StoredChunk:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    with np.load(path) as z:
        data = z["data"]
        kp = KeypointSequence(z["coords"], z["confidence"]) if "coords" in z else None
        cropped = z["cropped"] if "cropped" in z else None
    label = ChunkLabel.parse(meta["label"]) if meta["label"] is not None else None
    return StoredChunk(meta["video_id"], VideoChunk(data, meta["start_frame"], label), kp, cropped)


def list_chunks(directory: str | Path, video_ids: set[str] | None = None) -> list[Path]:
    paths = sorted(Path(directory).glob("*.npz"))
    if video_ids is None:
        return paths
    return [p for p in paths if p.stem.rsplit("__", 1)[0] in video_ids]


def preprocess_video(
    video_path: str | Path,
    frame_labels: Sequence[ChunkLabel] | None,
    estimator: PoseEstimator | None,
    stride: int = DEFAULT_STRIDE,
) -> list[tuple[VideoChunk, KeypointSequence | None]]:
    """Decode, chunk, label and pose-annotate one video."""
    seq = sample_and_resize(video_path)
    if frame_labels is not None and len(frame_labels) < len(seq):
        # Annotation duration is shorter than the decoded stream; pad with no-class.
        frame_labels = list(frame_labels) + [ChunkLabel.NO_CLASS] * (len(seq) - len(frame_labels))
    chunks = make_chunks(seq, stride, frame_labels)
    return [(c, extract_keypoints(c, estimator) if estimator is not None else None) for c in chunks]
