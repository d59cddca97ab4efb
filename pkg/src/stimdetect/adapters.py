"""Reference pose estimator and person detector built on torchvision detection models.

Both need weights: either torchvision's published COCO checkpoints
(``pretrained=True``, downloaded on first use) or a local state dict.
"""

from __future__ import annotations

import importlib
import pickle
from pathlib import Path

import numpy as np
import torch
import torchvision

from .errors import BackboneUnavailable
from .preprocess import NUM_JOINTS
from .prefetch import BoundingBox

COCO_PERSON = 1


def _build_detection(name: str, pretrained: bool, weights_path: str | Path | None, min_size: int):
    ctor = getattr(torchvision.models.detection, name)
    kwargs = dict(weights=None, weights_backbone=None, min_size=min_size, max_size=max(min_size, 1333))
    if weights_path is not None:
        model = ctor(**kwargs)
        try:
            model.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
        except (OSError, RuntimeError, pickle.UnpicklingError) as exc:
            raise BackboneUnavailable(f"cannot load {name} weights from {weights_path}: {exc}") from exc
    elif pretrained:
        try:
            model = ctor(**{**kwargs, "weights": "DEFAULT"})
        except Exception as exc:
            raise BackboneUnavailable(f"pretrained {name} weights unavailable: {exc}") from exc
    else:
        raise BackboneUnavailable(f"{name} needs pretrained=True or a weights_path")
    return model.eval()


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))


class KeypointRCNNPoseEstimator:
    """17 COCO joints of the highest-scoring person, normalised to [0, 1].

    Joint confidence is the sigmoid of the model's keypoint score. With no
    person found every joint has zero confidence.
    """

    def __init__(self, pretrained: bool = True, weights_path: str | Path | None = None,
                 min_size: int = 320, min_score: float = 0.5):
        self.model = _build_detection("keypointrcnn_resnet50_fpn", pretrained, weights_path, min_size)
        self.min_score = min_score

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        out = self.model([_to_tensor(image)])[0]
        result = np.zeros((NUM_JOINTS, 3), dtype=np.float32)
        keep = (out["labels"] == COCO_PERSON) & (out["scores"] >= self.min_score)
        if not keep.any():
            return result
        best = int(torch.nonzero(keep)[out["scores"][keep].argmax()])
        kp = out["keypoints"][best].numpy()
        result[:, 0] = np.clip(kp[:, 0] / max(w - 1, 1), 0, 1)
        result[:, 1] = np.clip(kp[:, 1] / max(h - 1, 1), 0, 1)
        result[:, 2] = torch.sigmoid(out["keypoints_scores"][best]).numpy()
        return result


class FasterRCNNPersonDetector:
    """Person boxes from a COCO Faster R-CNN, in pixel coordinates of the input frame."""

    def __init__(self, pretrained: bool = True, weights_path: str | Path | None = None,
                 min_size: int = 320, min_score: float = 0.5):
        self.model = _build_detection("fasterrcnn_resnet50_fpn", pretrained, weights_path, min_size)
        self.min_score = min_score

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> list[BoundingBox]:
        out = self.model([_to_tensor(image)])[0]
        boxes = []
        for (x0, y0, x1, y1), label, score in zip(out["boxes"].tolist(), out["labels"].tolist(), out["scores"].tolist()):
            if label == COCO_PERSON and score >= self.min_score and x1 > x0 and y1 > y0:
                boxes.append(BoundingBox(x0, y0, x1 - x0, y1 - y0, detector_score=score))
        return boxes


def load_factory(spec: str):
    """Resolve ``package.module:callable`` and call it with no arguments."""
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ValueError(f"expected 'module:factory', got {spec!r}")
    return getattr(importlib.import_module(module_name), attr)()
