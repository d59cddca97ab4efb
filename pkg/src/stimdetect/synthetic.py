"""Synthetic chunks, keypoint trajectories and heuristic stand-in estimators.

Used by the test-suite, the acceptance checks and offline smoke runs of the
command line when no pose or person detector weights are available. Nothing
here is meant to recognise real children.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .labels import ACTION_LABELS, ChunkLabel
from .prefetch import BoundingBox
from .preprocess import CHUNK_LEN, FRAME_SIZE, NUM_JOINTS

# Upright COCO-order skeleton in normalised image coordinates.
BASE_POSE = np.array(
    [
        [0.50, 0.20], [0.48, 0.18], [0.52, 0.18], [0.46, 0.19], [0.54, 0.19],  # nose, eyes, ears
        [0.42, 0.30], [0.58, 0.30],  # shoulders
        [0.38, 0.42], [0.62, 0.42],  # elbows
        [0.36, 0.54], [0.64, 0.54],  # wrists
        [0.45, 0.56], [0.55, 0.56],  # hips
        [0.44, 0.72], [0.56, 0.72],  # knees
        [0.44, 0.88], [0.56, 0.88],  # ankles
    ],
    dtype=np.float32,
)
HEAD = [0, 1, 2, 3, 4]
ARMS = [7, 8, 9, 10]


def action_keypoints(label: ChunkLabel, rng: np.random.Generator, noise: float = 0.005) -> np.ndarray:
    """A ``(40, 17, 2)`` trajectory whose motion pattern identifies ``label``."""
    t = np.arange(CHUNK_LEN) / 10.0
    phase = rng.uniform(0, 2 * np.pi)
    pose = np.repeat(BASE_POSE[None], CHUNK_LEN, axis=0).copy()
    pose += rng.uniform(-0.05, 0.05, size=2).astype(np.float32)
    if label is ChunkLabel.ARM_FLAPPING:
        pose[:, ARMS, 1] += (0.08 * np.sin(2 * np.pi * 3.0 * t + phase))[:, None]
    elif label is ChunkLabel.HEADBANGING:
        pose[:, HEAD, 1] += (0.06 * np.sin(2 * np.pi * 2.0 * t + phase))[:, None]
    elif label is ChunkLabel.SPINNING:
        cx = pose[:, :, 0].mean(axis=1, keepdims=True)
        pose[:, :, 0] = cx + (pose[:, :, 0] - cx) * np.cos(2 * np.pi * 0.5 * t + phase)[:, None]
    pose += rng.normal(0, noise, size=pose.shape).astype(np.float32)
    return np.clip(pose, 0.0, 1.0)


def render_pose(keypoints: np.ndarray, size: int = FRAME_SIZE, radius: int = 3) -> np.ndarray:
    """Draw each frame's joints as bright dots: ``(T, 3, size, size)`` in [0, 1]."""
    frames = np.zeros((len(keypoints), size, size, 3), dtype=np.float32)
    for f, joints in zip(frames, keypoints):
        for x, y in joints:
            cv2.circle(f, (int(x * (size - 1)), int(y * (size - 1))), radius, (1.0, 0.9, 0.8), -1)
    return frames.transpose(0, 3, 1, 2).copy()


def blob_chunk(moving: bool, rng: np.random.Generator, size: int = FRAME_SIZE) -> np.ndarray:
    """A bright square on a noisy background; it oscillates when ``moving``."""
    chunk = rng.uniform(0.0, 0.1, size=(CHUNK_LEN, 3, size, size)).astype(np.float32)
    side = size // 5
    x0, y0 = rng.integers(side, size - 2 * side, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    for t in range(CHUNK_LEN):
        dx = int(round(side * np.sin(2 * np.pi * t / 8 + phase))) if moving else 0
        x = int(np.clip(x0 + dx, 0, size - side))
        chunk[t, :, y0 : y0 + side, x : x + side] = 0.9
    return chunk


def blob_dataset(n: int, seed: int = 0) -> tuple[np.ndarray, list[ChunkLabel]]:
    """``n`` chunks, alternating moving (labelled arm-flapping) and static (no-class)."""
    rng = np.random.default_rng(seed)
    chunks, labels = [], []
    for i in range(n):
        moving = i % 2 == 0
        chunks.append(blob_chunk(moving, rng))
        labels.append(ChunkLabel.ARM_FLAPPING if moving else ChunkLabel.NO_CLASS)
    return np.stack(chunks), labels


def action_dataset(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, list[ChunkLabel]]:
    """``n`` rendered skeleton chunks cycling through the three actions, with their keypoints."""
    rng = np.random.default_rng(seed)
    kps, labels = [], []
    for i in range(n):
        label = ACTION_LABELS[i % 3]
        kps.append(action_keypoints(label, rng))
        labels.append(label)
    kps = np.stack(kps)
    return np.stack([render_pose(k) for k in kps]), kps, labels


def write_video(path: str | Path, frames: np.ndarray, fps: float = 10.0) -> Path:
    """Encode ``(N, 3, H, W)`` frames in [0, 1] as an mp4 file."""
    n, _, h, w = frames.shape
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    if not writer.isOpened():
        raise OSError(f"cannot open video writer for {path}")
    for f in frames:
        img = (np.clip(f.transpose(1, 2, 0), 0, 1) * 255).astype(np.uint8)
        writer.write(cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    writer.release()
    return Path(path)


def _bright_mask(image: np.ndarray, threshold: float) -> np.ndarray:
    return image.mean(axis=2) > threshold


class BlobPoseEstimator:
    """Places the template skeleton on the bright region's centroid, scaled by its spread.

    Stateless, so a single instance can be shared across workers.
    """

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold

    def __call__(self, image: np.ndarray) -> np.ndarray:
        mask = _bright_mask(image, self.threshold)
        out = np.zeros((NUM_JOINTS, 3), dtype=np.float32)
        if not mask.any():
            return out  # zero confidence everywhere
        h, w = mask.shape
        ys, xs = np.nonzero(mask)
        cx, cy = xs.mean() / (w - 1), ys.mean() / (h - 1)
        sx = max(xs.std() / (w - 1), 0.02) * 4
        sy = max(ys.std() / (h - 1), 0.02) * 4
        centre = BASE_POSE.mean(axis=0)
        out[:, 0] = np.clip(cx + (BASE_POSE[:, 0] - centre[0]) * sx, 0, 1)
        out[:, 1] = np.clip(cy + (BASE_POSE[:, 1] - centre[1]) * sy, 0, 1)
        out[:, 2] = 0.9
        return out


class BlobPersonDetector:
    """One box around the bright pixels, or none."""

    def __init__(self, threshold: float = 0.5, margin: int = 4):
        self.threshold = threshold
        self.margin = margin

    def __call__(self, image: np.ndarray) -> list[BoundingBox]:
        mask = _bright_mask(image, self.threshold)
        if not mask.any():
            return []
        h, w = mask.shape
        ys, xs = np.nonzero(mask)
        x0, y0 = max(0, xs.min() - self.margin), max(0, ys.min() - self.margin)
        x1, y1 = min(w, xs.max() + 1 + self.margin), min(h, ys.max() + 1 + self.margin)
        return [BoundingBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0), float(mask.mean()))]
