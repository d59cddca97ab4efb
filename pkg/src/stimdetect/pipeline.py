"""Whole-video inference: prefetch crop, detector, windowing, identifier, no-class threshold."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .detector import BinaryNet, m1_predict
from .errors import StimDetectError
from .identifier import Identifier, m2_forward, predict_action
from .labels import ChunkLabel
from .prefetch import ChildClassifier, PersonDetector, prefetch_chunk
from .preprocess import (
    DEFAULT_STRIDE,
    TARGET_FPS,
    FrameSequence,
    PoseEstimator,
    extract_keypoints,
    make_chunks,
    sample_and_resize,
)


@dataclass
class PipelineConfig:
    window_size: int = 2
    stride: int = DEFAULT_STRIDE
    noclass_delta: float = 0.10
    smoothing: bool = False
    use_prefetch: bool = True
    m1_batch_size: int = 8

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.noclass_delta < 0:
            raise ValueError("noclass_delta must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")


@dataclass(frozen=True)
class SegmentResult:
    chunk_index: int
    start_time: float
    label: ChunkLabel
    m1_probability: float
    probs: tuple[float, float, float] | None = None
    intensity: float | None = None

    def to_record(self, video_id: str) -> dict:
        rec = {
            "video_id": video_id,
            "chunk_index": self.chunk_index,
            "start_time": self.start_time,
            "label": self.label.value,
            "m1_probability": self.m1_probability,
        }
        if self.probs is not None:
            rec["probs"] = list(self.probs)
            rec["intensity"] = self.intensity
        return rec


class ChunkProcessingError(StimDetectError):
    """Wraps a stage failure with the index of the chunk being processed."""

    def __init__(self, chunk_index: int, cause: StimDetectError):
        super().__init__(f"chunk {chunk_index}: {cause}")
        self.chunk_index = chunk_index
        self.code = cause.code

    def to_record(self) -> dict:
        return {**super().to_record(), "chunk_index": self.chunk_index}


def window_chunks(m1_decisions: Sequence[bool], window_size: int) -> list[int]:
    """Indices (0-based, sorted) routed to the identifier.

    The decisions are scanned in consecutive, non-overlapping windows of
    ``window_size``; a window with any positive sends all of its chunks. The
    last window may be shorter.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    n = len(m1_decisions)
    w = min(window_size, n) or 1
    out: list[int] = []
    for start in range(0, n, w):
        window = range(start, min(start + w, n))
        if any(m1_decisions[i] for i in window):
            out.extend(window)
    return out


def smooth_predictions(results: Sequence[SegmentResult]) -> list[SegmentResult]:
    """Radius-1 majority vote over labels; a tie keeps the original label."""
    labels = [r.label for r in results]
    out = []
    for i, r in enumerate(results):
        counts = Counter(labels[max(0, i - 1) : i + 2]).most_common()
        winner, top = counts[0]
        unique_top = len(counts) == 1 or counts[1][1] < top
        out.append(replace(r, label=winner) if unique_top and winner != r.label else r)
    return out


class Pipeline:
    """Holds the loaded models; ``m2_calls`` counts identifier invocations."""

    def __init__(
        self,
        m1: BinaryNet,
        m2: Identifier,
        pose_estimator: PoseEstimator,
        config: PipelineConfig | None = None,
        person_detector: PersonDetector | None = None,
        child_classifier: ChildClassifier | None = None,
    ):
        self.config = config or PipelineConfig()
        if self.config.use_prefetch and person_detector is None:
            raise ValueError("use_prefetch needs a person detector; disable it for the direct path")
        self.m1 = m1.eval()
        self.m2 = m2.eval()
        self.pose_estimator = pose_estimator
        self.person_detector = person_detector
        self.child_classifier = child_classifier
        self.m2_calls = 0

    def _m1_probabilities(self, inputs: list[np.ndarray]) -> list[float]:
        probs: list[float] = []
        bs = self.config.m1_batch_size
        with torch.no_grad():
            for start in range(0, len(inputs), bs):
                x = torch.as_tensor(np.stack(inputs[start : start + bs]))
                probs.extend(torch.sigmoid(self.m1(x)).tolist())
        return probs

    def run_frames(self, seq: FrameSequence) -> list[SegmentResult]:
        cfg = self.config
        chunks = make_chunks(seq, cfg.stride)
        if not chunks:
            return []
        m1_inputs = []
        for i, c in enumerate(chunks):
            if cfg.use_prefetch:
                try:
                    c = prefetch_chunk(c, self.person_detector, self.child_classifier)[0]
                except StimDetectError as exc:
                    raise ChunkProcessingError(i, exc) from exc
            m1_inputs.append(c.data)
        m1_probs = self._m1_probabilities(m1_inputs)
        decisions = [m1_predict(p).decision for p in m1_probs]
        routed = set(window_chunks(decisions, cfg.window_size))

        results = []
        for i, (chunk, p1) in enumerate(zip(chunks, m1_probs)):
            start_time = chunk.start_frame / TARGET_FPS
            if i not in routed:
                results.append(SegmentResult(i, start_time, ChunkLabel.NO_CLASS, p1))
                continue
            try:
                kp = extract_keypoints(chunk, self.pose_estimator)
            except StimDetectError as exc:
                raise ChunkProcessingError(i, exc) from exc
            # The identifier sees the uncropped chunk.
            probs = m2_forward(self.m2, chunk.data, kp.coords)
            self.m2_calls += 1
            pred = predict_action(probs, cfg.noclass_delta)
            results.append(SegmentResult(i, start_time, pred.label, p1, pred.probs, pred.intensity))
        return smooth_predictions(results) if cfg.smoothing else results

    def run(self, video_path: str | Path) -> list[SegmentResult]:
        return self.run_frames(sample_and_resize(video_path))


def run_pipeline(video_path: str | Path, pipeline: Pipeline) -> list[SegmentResult]:
    return pipeline.run(video_path)


def to_jsonl(results: Iterable[SegmentResult], video_id: str) -> str:
    return "".join(json.dumps(r.to_record(video_id)) + "\n" for r in results)


def write_jsonl(results: Iterable[SegmentResult], video_id: str, path: str | Path) -> None:
    Path(path).write_text(to_jsonl(results, video_id), encoding="utf-8")
