"""Binary stimming detector built from factorised (2+1)D convolutions."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatch
from .preprocess import CHUNK_LEN, FRAME_SIZE

CHECKPOINT_FORMAT = 1
DECISION_THRESHOLD = 0.5


@dataclass
class M1Config:
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    channels: tuple[int, ...] = (16, 32, 60)
    head_widths: tuple[int, ...] = (16,)
    first_spatial_stride: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "M1Config":
        d = dict(d)
        for k in ("channels", "head_widths"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class Conv2Plus1D(nn.Module):
    """Spatial ``1 x k x k`` convolution followed by a temporal ``t x 1 x 1`` one."""

    def __init__(self, cin: int, cout: int, k: int, t: int, spatial_stride: int = 1):
        super().__init__()
        self.spatial = nn.Conv3d(
            cin, cout, (1, k, k), stride=(1, spatial_stride, spatial_stride),
            padding=(0, k // 2, k // 2), bias=False,
        )
        self.bn_s = nn.BatchNorm3d(cout)
        self.temporal = nn.Conv3d(cout, cout, (t, 1, 1), padding=(t // 2, 0, 0), bias=False)
        self.bn_t = nn.BatchNorm3d(cout)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.relu(self.bn_s(self.spatial(x)))
        return self.relu(self.bn_t(self.temporal(x)))


class BinaryNet(nn.Module):
    """Input ``(B, 40, 3, 100, 100)`` chunks, output one logit per chunk."""

    def __init__(self, config: M1Config | None = None):
        super().__init__()
        self.config = config = config or M1Config()
        blocks: list[nn.Module] = []
        cin = 3
        for i, cout in enumerate(config.channels):
            if i:
                blocks.append(nn.MaxPool3d(2))
            stride = config.first_spatial_stride if i == 0 else 1
            blocks.append(Conv2Plus1D(cin, cout, config.spatial_kernel, config.temporal_kernel, stride))
            cin = cout
        self.features = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool3d(1)
        head: list[nn.Module] = []
        for w in config.head_widths:
            head += [nn.Linear(cin, w), nn.ReLU(inplace=True)]
            cin = w
        head.append(nn.Linear(cin, 1))
        self.head = nn.Sequential(*head)

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        if chunks.ndim != 5 or tuple(chunks.shape[1:]) != (CHUNK_LEN, 3, FRAME_SIZE, FRAME_SIZE):
            raise ShapeMismatch(
                f"expected (B, {CHUNK_LEN}, 3, {FRAME_SIZE}, {FRAME_SIZE}), got {tuple(chunks.shape)}"
            )
        x = chunks.permute(0, 2, 1, 3, 4)  # -> (B, C, T, H, W)
        x = self.pool(self.features(x)).flatten(1)
        return self.head(x).squeeze(-1)


def _as_batch(chunk) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(np.asarray(chunk, dtype=np.float32))
    if x.ndim == 4:
        return x.unsqueeze(0), True
    return x, False


@torch.no_grad()
def m1_forward(model: BinaryNet, chunk) -> float | np.ndarray:
    """Action probability for one ``(40, 3, 100, 100)`` chunk or a batch of them."""
    x, single = _as_batch(chunk)
    model.eval()
    probs = torch.sigmoid(model(x)).numpy()
    return float(probs[0]) if single else probs


@dataclass(frozen=True)
class BinaryPrediction:
    probability: float
    decision: bool


def m1_predict(probability: float) -> BinaryPrediction:
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability {probability} outside [0, 1]")
    return BinaryPrediction(float(probability), probability >= DECISION_THRESHOLD)


def save_m1(model: BinaryNet, path: str | Path, metadata: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "kind": "m1",
            "config": asdict(model.config),
            "state_dict": model.state_dict(),
            "metadata": metadata or {},
        },
        path,
    )


def load_m1(path: str | Path) -> tuple[BinaryNet, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("kind") != "m1":
        raise ValueError(f"{path} is not a detector checkpoint")
    model = BinaryNet(M1Config.from_dict(ckpt["config"]))
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt.get("metadata", {})
