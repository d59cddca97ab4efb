"""Teacher/student frame-sequence classifiers and the distillation objective.

Neither model sees keypoints: per-frame ResNet-18 outputs (1000-d) feed a
recurrent block. The teacher adds bidirectionality and self-attention and
trains the backbone's final ``fc`` layer; the student freezes the whole
backbone and uses half as many recurrent cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbones import FrozenBackbone, count_parameters, load_torchvision
from .labels import ACTION_LABELS

BACKBONE_OUT = 1000


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 2.0
    soft_weight: float = 0.25
    hard_weight: float = 0.75

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if abs(self.soft_weight + self.hard_weight - 1.0) > 1e-12:
            raise ValueError("soft_weight + hard_weight must equal 1")


def soft_target_loss(student_logits: torch.Tensor, teacher_logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """``T^2 * KL(teacher_T || student_T)``, averaged over the batch."""
    t = temperature
    log_s = F.log_softmax(student_logits / t, dim=-1)
    log_t = F.log_softmax(teacher_logits / t, dim=-1)
    kl = (log_t.exp() * (log_t - log_s)).sum(dim=-1)
    return kl.mean() * t * t


def distillation_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    cfg: DistillConfig = DistillConfig(),
) -> torch.Tensor:
    """``soft_weight * L_soft + hard_weight * L_ce``. Accepts single logit vectors or batches."""
    if student_logits.ndim == 1:
        student_logits = student_logits.unsqueeze(0)
        teacher_logits = teacher_logits.unsqueeze(0)
        labels = torch.as_tensor(labels).reshape(1)
    hard = F.cross_entropy(student_logits, labels.long())
    soft = soft_target_loss(student_logits, teacher_logits, cfg.temperature)
    return cfg.soft_weight * soft + cfg.hard_weight * hard


class _FrameEncoder(nn.Module):
    """ResNet-18 per frame: frozen trunk (to the pooled 512-d vector) then ``fc``."""

    def __init__(self, trainable_fc: bool, pretrained: bool, weights_path):
        super().__init__()
        net = load_torchvision("resnet18", pretrained, weights_path)
        self.fc = net.fc
        net.fc = nn.Identity()
        self.trunk = FrozenBackbone(net)
        self.fc.requires_grad_(trainable_fc)

    @torch.no_grad()
    def trunk_features(self, chunks: torch.Tensor) -> torch.Tensor:
        b, t = chunks.shape[:2]
        return self.trunk(chunks.flatten(0, 1)).view(b, t, -1)

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        return self.fc(self.trunk_features(chunks))


class TeacherNet(nn.Module):
    def __init__(
        self,
        lstm_hidden: int = 832,
        attention_heads: int = 8,
        fc_widths: tuple[int, int] = (64, 64),
        pretrained: bool = False,
        weights_path=None,
    ):
        super().__init__()
        self.encoder = _FrameEncoder(True, pretrained, weights_path)
        self.lstm = nn.LSTM(BACKBONE_OUT, lstm_hidden, batch_first=True, bidirectional=True)
        width = 2 * lstm_hidden
        self.attention = nn.MultiheadAttention(width, attention_heads, batch_first=True)
        a, b = fc_widths
        self.head = nn.Sequential(
            nn.Linear(width, a), nn.ReLU(), nn.Linear(a, b), nn.ReLU(), nn.Linear(b, len(ACTION_LABELS))
        )

    def forward_trunk(self, trunk_features: torch.Tensor) -> torch.Tensor:
        return self.forward_features(self.encoder.fc(trunk_features))

    def forward_features(self, frame_features: torch.Tensor) -> torch.Tensor:
        seq, _ = self.lstm(frame_features)
        attended, _ = self.attention(seq, seq, seq, need_weights=False)
        return self.head(attended.mean(dim=1))

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        return self.forward_features(self.encoder(chunks))


class StudentNet(nn.Module):
    def __init__(self, lstm_hidden: int = 832, fc_width: int = 3392, pretrained: bool = False, weights_path=None):
        super().__init__()
        self.encoder = _FrameEncoder(False, pretrained, weights_path)
        self.lstm = nn.LSTM(BACKBONE_OUT, lstm_hidden, batch_first=True)
        self.head = nn.Sequential(
            nn.Linear(lstm_hidden, fc_width), nn.ReLU(), nn.Linear(fc_width, len(ACTION_LABELS))
        )

    @torch.no_grad()
    def encode(self, chunks: torch.Tensor) -> torch.Tensor:
        return self.encoder(chunks)

    def forward_features(self, frame_features: torch.Tensor) -> torch.Tensor:
        _, (h_n, _) = self.lstm(frame_features)
        return self.head(h_n[-1])

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        return self.forward_features(self.encode(chunks))


@dataclass(frozen=True)
class ModelFootprint:
    total_weights: int
    learnable_weights: int

    @classmethod
    def of(cls, model: nn.Module) -> "ModelFootprint":
        return cls(*count_parameters(model))


def build_teacher_student(
    pretrained: bool = False, weights_path=None
) -> tuple[TeacherNet, StudentNet, dict[str, ModelFootprint]]:
    teacher = TeacherNet(pretrained=pretrained, weights_path=weights_path)
    student = StudentNet(pretrained=pretrained, weights_path=weights_path)
    return teacher, student, {"teacher": ModelFootprint.of(teacher), "student": ModelFootprint.of(student)}
