"""Child localisation ahead of the binary detector.

A person detector proposes boxes, a child/adult classifier scores them, and
the best child box of each frame becomes that frame's crop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np
import torch
from torch import nn

from .backbones import FrozenBackbone, backbone_identity, load_torchvision
from .errors import DegenerateCrop
from .preprocess import CHUNK_LEN, VideoChunk


@dataclass(frozen=True)
class BoundingBox:
    """Pixel-space box; ``(x, y)`` is the top-left corner."""

    x: float
    y: float
    w: float
    h: float
    detector_score: float = 1.0
    child_prob: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateCrop(f"box has non-positive extent {self.w}x{self.h}")
        if not (0.0 <= self.detector_score <= 1.0 and 0.0 <= self.child_prob <= 1.0):
            raise ValueError("detector_score and child_prob must lie in [0, 1]")

    @property
    def area(self) -> float:
        return self.w * self.h

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer ``(x0, y0, x1, y1)`` clamped to the frame."""
        x0 = max(0, int(math.floor(self.x)))
        y0 = max(0, int(math.floor(self.y)))
        x1 = min(width, int(math.ceil(self.x + self.w)))
        y1 = min(height, int(math.ceil(self.y + self.h)))
        return x0, y0, x1, y1

    @classmethod
    def full_frame(cls, width: int, height: int) -> "BoundingBox":
        return cls(0.0, 0.0, float(width), float(height), detector_score=0.0, child_prob=0.0)


@dataclass
class CropPlan:
    per_frame_region: list[BoundingBox]
    detected: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.per_frame_region)


class PersonDetector(Protocol):
    """Returns the person-class boxes found in one ``(H, W, 3)`` RGB image in [0, 1].

    ``child_prob`` of the returned boxes is ignored; the classifier fills it in.
    """

    def __call__(self, image: np.ndarray) -> list[BoundingBox]: ...


class ChildClassifier(nn.Module):
    """Frozen VGG19-BN backbone with a small trainable binary head."""

    def __init__(
        self,
        backbone: str = "vgg19_bn",
        pretrained: bool = False,
        weights_path: str | Path | None = None,
        input_size: int = 224,
        head_widths: tuple[int, ...] = (256, 64),
    ):
        super().__init__()
        self.input_size = input_size
        self.backbone_name = backbone
        self.head_widths = tuple(head_widths)
        self.backbone_meta = backbone_identity(backbone, pretrained, weights_path)
        self.backbone = FrozenBackbone(load_torchvision(backbone, pretrained, weights_path))
        layers: list[nn.Module] = []
        width = 1000
        for w in head_widths:
            layers += [nn.Linear(width, w), nn.BatchNorm1d(w), nn.ReLU()]
            width = w
        layers.append(nn.Linear(width, 1))
        self.head = nn.Sequential(*layers)

    @torch.no_grad()
    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return self.backbone(images)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Child logits for a ``(B, 3, s, s)`` batch."""
        return self.head(self.embed(images)).squeeze(-1)

    def prepare(self, crop: np.ndarray) -> torch.Tensor:
        """``(H, W, 3)`` crop in [0, 1] -> ``(3, s, s)`` tensor."""
        if crop.ndim != 3 or crop.shape[0] == 0 or crop.shape[1] == 0:
            raise DegenerateCrop(f"empty crop of shape {crop.shape}")
        img = cv2.resize(crop.astype(np.float32), (self.input_size, self.input_size))
        return torch.from_numpy(img.transpose(2, 0, 1).copy())

    @torch.no_grad()
    def classify(self, crops: Sequence[np.ndarray]) -> list[float]:
        if not crops:
            return []
        was_training = self.training
        self.eval()
        batch = torch.stack([self.prepare(c) for c in crops])
        probs = torch.sigmoid(self(batch)).tolist()
        self.train(was_training)
        return [float(p) for p in probs]


def save_child_classifier(classifier: ChildClassifier, path: str | Path, metadata: dict | None = None) -> None:
    # Whole state dict, so a random-init backbone reloads identically.
    torch.save(
        {
            "kind": "prefetch",
            "backbone_name": classifier.backbone_name,
            "head_widths": list(classifier.head_widths),
            "input_size": classifier.input_size,
            "backbone": classifier.backbone_meta,
            "state_dict": classifier.state_dict(),
            "metadata": metadata or {},
        },
        path,
    )


def load_child_classifier(path: str | Path) -> tuple[ChildClassifier, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("kind") != "prefetch":
        raise ValueError(f"{path} is not a child-classifier checkpoint")
    model = ChildClassifier(
        ckpt["backbone_name"], input_size=ckpt["input_size"], head_widths=tuple(ckpt["head_widths"])
    )
    model.load_state_dict(ckpt["state_dict"])
    model.backbone_meta = ckpt["backbone"]
    model.eval()
    return model, ckpt.get("metadata", {})


def classify_child(crop: np.ndarray, classifier: ChildClassifier) -> float:
    """Probability that ``crop`` shows a child."""
    return classifier.classify([crop])[0]


def _pick_key(box: BoundingBox) -> tuple:
    # Highest child_prob, then larger area; position only separates exact ties.
    return (box.child_prob, box.area, -box.y, -box.x, box.detector_score)


def select_crop_regions(
    per_frame_detections: Sequence[Sequence[BoundingBox]],
    frame_size: tuple[int, int] = (100, 100),
) -> CropPlan:
    """One region per frame.

    Each frame takes its most child-like box. A frame without boxes reuses the
    largest (h * w) box chosen in any other frame, earliest frame on ties. If no
    frame has a box the whole frame is used.
    """
    chosen: list[BoundingBox | None] = [
        max(dets, key=_pick_key) if dets else None for dets in per_frame_detections
    ]
    fallback = None
    for box in chosen:
        if box is not None and (fallback is None or box.area > fallback.area):
            fallback = box
    if fallback is None:
        fallback = BoundingBox.full_frame(*frame_size)
    return CropPlan(
        per_frame_region=[b if b is not None else fallback for b in chosen],
        detected=[b is not None for b in chosen],
    )


def apply_crops(chunk: VideoChunk, plan: CropPlan) -> VideoChunk:
    """Crop each frame to its planned region and resize back to the chunk size."""
    n, _, height, width = chunk.data.shape
    if len(plan) != n:
        raise ValueError(f"plan has {len(plan)} regions for a {n}-frame chunk")
    out = np.empty_like(chunk.data)
    for t, box in enumerate(plan.per_frame_region):
        x0, y0, x1, y1 = box.pixel_bounds(width, height)
        if x1 - x0 < 2 or y1 - y0 < 2:
            raise DegenerateCrop(f"frame {t}: region {box} collapses to {x1 - x0}x{y1 - y0} px")
        region = np.ascontiguousarray(chunk.data[t, :, y0:y1, x0:x1].transpose(1, 2, 0))
        if region.shape[:2] != (height, width):
            region = cv2.resize(region, (width, height), interpolation=cv2.INTER_LINEAR)
        out[t] = region.transpose(2, 0, 1)
    return replace(chunk, data=out)


def prefetch_chunk(
    chunk: VideoChunk, detector: PersonDetector, classifier: ChildClassifier | None
) -> tuple[VideoChunk, CropPlan]:
    """Detect, score and crop every frame of ``chunk``."""
    if len(chunk.data) != CHUNK_LEN:
        raise ValueError(f"expected a {CHUNK_LEN}-frame chunk")
    _, _, height, width = chunk.data.shape
    detections = []
    for t in range(len(chunk.data)):
        image = np.ascontiguousarray(chunk.data[t].transpose(1, 2, 0))
        boxes = []
        for b in detector(image):
            x0, y0, x1, y1 = b.pixel_bounds(width, height)
            if x1 - x0 >= 2 and y1 - y0 >= 2:
                boxes.append((b, image[y0:y1, x0:x1]))
        if classifier is not None:
            probs = classifier.classify([crop for _, crop in boxes])
        else:
            probs = [b.detector_score for b, _ in boxes]
        detections.append([replace(b, child_prob=p) for (b, _), p in zip(boxes, probs)])
    plan = select_crop_regions(detections, (width, height))
    return apply_crops(chunk, plan), plan
