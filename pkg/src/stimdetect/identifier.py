"""Three-way action identifier: one representative frame plus a keypoint Bi-LSTM."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbones import FrozenBackbone, backbone_identity, resnet18_trunk
from .errors import ShapeMismatch
from .labels import ACTION_LABELS, ChunkLabel
from .preprocess import CHUNK_LEN, NUM_JOINTS

CHECKPOINT_FORMAT = 1
THRESHOLD_SLACK = 1e-12
NOCLASS_BASE = 0.33
TRUNK_CHANNELS = 512


@dataclass
class M2Config:
    spatial_embed_dim: int = 2048
    lstm_hidden_per_direction: int = 2
    noclass_delta: float = 0.10
    backbone: str = "resnet18"
    pretrained: bool = False
    weights_path: str | None = None

    @property
    def pool_grid(self) -> int:
        """Side of the pooled trunk grid: 512 channels x g x g = embed dim."""
        g = math.isqrt(self.spatial_embed_dim // TRUNK_CHANNELS)
        if TRUNK_CHANNELS * g * g != self.spatial_embed_dim:
            raise ValueError(
                f"spatial_embed_dim must be 512 * g^2 (512, 2048, 4608, ...), got {self.spatial_embed_dim}"
            )
        return g

    @property
    def feature_dim(self) -> int:
        return self.spatial_embed_dim + 2 * self.lstm_hidden_per_direction


def select_representative_frame(joints) -> int:
    """Index (0-based) of the frame that moves most before the next one.

    Displacement is the Euclidean norm of the flattened joint difference
    between frames t and t+1. The first maximum wins; a motionless sequence
    returns 0.
    """
    j = np.asarray(joints, dtype=np.float64)
    if j.ndim < 2 or j.shape[0] != CHUNK_LEN:
        raise ShapeMismatch(f"expected {CHUNK_LEN} joint rows, got shape {j.shape}")
    diffs = np.linalg.norm(j.reshape(CHUNK_LEN, -1)[1:] - j.reshape(CHUNK_LEN, -1)[:-1], axis=1)
    best = int(np.argmax(diffs))
    return best if diffs[best] > 0 else 0


def apply_noclass_threshold(probs, delta: float) -> ChunkLabel:
    """No-class when every probability is below ``0.33 + delta``, else the argmax action."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    p = np.asarray(probs, dtype=np.float64)
    best = int(np.argmax(p))
    # The slack keeps e.g. 0.43 at delta=0.10 on the action side despite 0.33 + 0.10 > 0.43 in floats.
    if p[best] < NOCLASS_BASE + delta - THRESHOLD_SLACK:
        return ChunkLabel.NO_CLASS
    return ACTION_LABELS[best]


@dataclass(frozen=True)
class ActionPrediction:
    probs: tuple[float, float, float]
    label: ChunkLabel
    intensity: float


def predict_action(probs, delta: float) -> ActionPrediction:
    p = tuple(float(v) for v in probs)
    return ActionPrediction(p, apply_noclass_threshold(p, delta), max(p))


class Identifier(nn.Module):
    """Frozen ResNet-18 embedding of one frame, concatenated with Bi-LSTM keypoint features."""

    def __init__(self, config: M2Config | None = None):
        super().__init__()
        self.config = config = config or M2Config()
        self.backbone_meta = backbone_identity(config.backbone, config.pretrained, config.weights_path)
        self.backbone = FrozenBackbone(resnet18_trunk(config.pretrained, config.weights_path))
        self.pool = nn.AdaptiveAvgPool2d(config.pool_grid)
        self.lstm = nn.LSTM(
            NUM_JOINTS * 2, config.lstm_hidden_per_direction, batch_first=True, bidirectional=True
        )
        self.head = nn.Linear(config.feature_dim, len(ACTION_LABELS))

    @torch.no_grad()
    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """``(B, 3, H, W)`` -> ``(B, spatial_embed_dim)``."""
        return self.pool(self.backbone(frames)).flatten(1)

    def temporal_features(self, keypoints: torch.Tensor) -> torch.Tensor:
        """``(B, 40, 34)`` -> final hidden state of both directions, ``(B, 2 * hidden)``."""
        _, (h_n, _) = self.lstm(keypoints)
        return torch.cat([h_n[0], h_n[1]], dim=1)

    def features(self, embedding: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        return torch.cat([embedding, self.temporal_features(keypoints)], dim=1)

    def logits_from_embedding(self, embedding: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(embedding, keypoints))

    def representative_frames(self, chunks: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        idx = [select_representative_frame(k) for k in keypoints.detach().cpu().numpy()]
        return chunks[torch.arange(len(idx)), torch.tensor(idx)]

    def forward(self, chunks: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        """Logits for ``(B, 40, 3, H, W)`` chunks and ``(B, 40, 17, 2)`` keypoints."""
        if chunks.ndim != 5 or chunks.shape[1] != CHUNK_LEN or chunks.shape[2] != 3:
            raise ShapeMismatch(f"expected (B, {CHUNK_LEN}, 3, H, W) chunks, got {tuple(chunks.shape)}")
        if tuple(keypoints.shape[1:]) != (CHUNK_LEN, NUM_JOINTS, 2) or len(keypoints) != len(chunks):
            raise ShapeMismatch(
                f"expected (B, {CHUNK_LEN}, {NUM_JOINTS}, 2) keypoints, got {tuple(keypoints.shape)}"
            )
        emb = self.embed_frames(self.representative_frames(chunks, keypoints))
        return self.logits_from_embedding(emb, keypoints.flatten(2))


@torch.no_grad()
def m2_forward(model: Identifier, chunk, keypoints) -> np.ndarray:
    """Softmax over (arm-flapping, headbanging, spinning) for one chunk."""
    x = torch.as_tensor(np.asarray(chunk, dtype=np.float32)).unsqueeze(0)
    k = torch.as_tensor(np.asarray(keypoints, dtype=np.float32)).unsqueeze(0)
    model.eval()
    return torch.softmax(model(x, k).double(), dim=1)[0].numpy()


class AllFramesIdentifier(nn.Module):
    """Ablation baseline: every frame's pooled embedding joined with its keypoints, fed to a Bi-LSTM."""

    def __init__(self, lstm_hidden_per_direction: int = 2, pretrained: bool = False, weights_path=None):
        super().__init__()
        self.backbone = FrozenBackbone(resnet18_trunk(pretrained, weights_path))
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.lstm = nn.LSTM(TRUNK_CHANNELS + NUM_JOINTS * 2, lstm_hidden_per_direction,
                            batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * lstm_hidden_per_direction, len(ACTION_LABELS))

    @torch.no_grad()
    def embed_frames(self, chunks: torch.Tensor) -> torch.Tensor:
        b, t = chunks.shape[:2]
        return self.pool(self.backbone(chunks.flatten(0, 1))).flatten(1).view(b, t, -1)

    def logits_from_embedding(self, embedding: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        _, (h_n, _) = self.lstm(torch.cat([embedding, keypoints], dim=2))
        return self.head(torch.cat([h_n[0], h_n[1]], dim=1))

    def forward(self, chunks: torch.Tensor, keypoints: torch.Tensor) -> torch.Tensor:
        return self.logits_from_embedding(self.embed_frames(chunks), keypoints.flatten(2))


def save_m2(model: Identifier, path: str | Path, metadata: dict | None = None) -> None:
    # The frozen trunk is saved with the rest so a random-init backbone reloads identically.
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": "m2",
            "config": asdict(model.config),
            "backbone": model.backbone_meta,
            "state_dict": model.state_dict(),
            "metadata": metadata or {},
        },
        path,
    )


def load_m2(path: str | Path) -> tuple[Identifier, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("kind") != "m2":
        raise ValueError(f"{path} is not an identifier checkpoint")
    stored = M2Config(**ckpt["config"])
    model = Identifier(M2Config(**{**ckpt["config"], "pretrained": False, "weights_path": None}))
    model.load_state_dict(ckpt["state_dict"])
    model.config = stored
    model.backbone_meta = ckpt["backbone"]
    model.eval()
    return model, ckpt.get("metadata", {})
