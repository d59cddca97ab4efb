"""Frozen torchvision image backbones shared by the prefetch, identifier and distillation models."""

from __future__ import annotations

import pickle
from pathlib import Path

import torch
import torchvision
from torch import nn

from .errors import BackboneUnavailable

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_torchvision(
    name: str, pretrained: bool = False, weights_path: str | Path | None = None
) -> nn.Module:
    """Build ``torchvision.models.<name>``.

    ``weights_path`` (a saved state dict) wins over ``pretrained``. With
    neither, the network keeps its random initialisation; that is what the
    offline test-suite uses.
    """
    try:
        ctor = getattr(torchvision.models, name)
    except AttributeError:
        raise BackboneUnavailable(f"unknown backbone {name!r}") from None
    if weights_path is not None:
        model = ctor(weights=None)
        try:
            model.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
        except (OSError, RuntimeError, pickle.UnpicklingError) as exc:
            raise BackboneUnavailable(f"cannot load {name} weights from {weights_path}: {exc}") from exc
        return model
    if pretrained:
        try:
            return ctor(weights="DEFAULT")
        except Exception as exc:  # download or cache failure
            raise BackboneUnavailable(f"pretrained {name} weights unavailable: {exc}") from exc
    return ctor(weights=None)


def backbone_identity(name: str, pretrained: bool, weights_path: str | Path | None) -> dict:
    if weights_path is not None:
        source = str(weights_path)
    else:
        source = "torchvision-default" if pretrained else "random-init"
    return {"name": name, "weights": source}


class FrozenBackbone(nn.Module):
    """Wraps an image network so it stays in eval mode with gradients off.

    Parameters whose qualified name starts with one of ``trainable`` keep
    ``requires_grad``; batch-norm statistics are frozen either way.
    Inputs are RGB in [0, 1]; ImageNet normalisation happens here.
    """

    def __init__(self, net: nn.Module, trainable: tuple[str, ...] = ()):
        super().__init__()
        self.net = net
        for name, p in self.net.named_parameters():
            p.requires_grad_(any(name.startswith(t) for t in trainable))
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        self.net.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        self.net.eval()
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net((x - self.mean) / self.std)


def resnet18_trunk(pretrained: bool = False, weights_path: str | Path | None = None) -> nn.Sequential:
    """ResNet-18 up to and including ``layer4`` (no pooling, no classifier)."""
    r = load_torchvision("resnet18", pretrained, weights_path)
    return nn.Sequential(r.conv1, r.bn1, r.relu, r.maxpool, r.layer1, r.layer2, r.layer3, r.layer4)


def count_parameters(model: nn.Module) -> tuple[int, int]:
    """``(total, learnable)`` weight counts."""
    total = sum(p.numel() for p in model.parameters())
    learnable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return total, learnable
