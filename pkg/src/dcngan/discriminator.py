"""Fully convolutional patch discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import InputTooSmallError


@dataclass
class PatchScoreMap:
    scores: torch.Tensor  # (B, 1, h, w) raw scores
    mean: torch.Tensor  # scalar


def _out_size(n, k=4, s=2, p=1):
    return (n + 2 * p - k) // s + 1


class PatchDiscriminator(nn.Module):
    """Four 4x4 conv layers (strides 2, 2, 2, 1) and a 1-channel 4x4 head.

    Channels ``ndf, 2ndf, 4ndf, 8ndf``; LeakyReLU(0.2); instance
    normalization on every layer but the first. Scores are left unsquashed
    for the least-squares objective.
    """

    strides = (2, 2, 2, 1)

    def __init__(self, ndf: int = 64, in_channels: int = 1):
        super().__init__()
        widths = [in_channels] + [ndf * 2 ** i for i in range(len(self.strides))]
        layers = []
        for i, stride in enumerate(self.strides):
            mods = [nn.Conv2d(widths[i], widths[i + 1], 4, stride=stride, padding=1)]
            if i > 0:
                mods.append(nn.InstanceNorm2d(widths[i + 1]))
            mods.append(nn.LeakyReLU(0.2))
            layers.append(nn.Sequential(*mods))
        self.layers = nn.ModuleList(layers)
        self.head = nn.Conv2d(widths[-1], 1, 4, stride=1, padding=1)

    @property
    def n_features(self) -> int:
        return len(self.layers)

    def score_size(self, n: int) -> int:
        for s in self.strides:
            n = _out_size(n, s=s)
        return _out_size(n, s=1)

    def min_input_size(self) -> int:
        n = 1
        while self.score_size(n) < 1:
            n += 1
        return n

    def forward(self, x, return_features: bool = False):
        if min(x.shape[-2:]) < self.min_input_size():
            raise InputTooSmallError(
                f"discriminator needs inputs of at least {self.min_input_size()} pixels per side, "
                f"got {tuple(x.shape[-2:])}"
            )
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        scores = self.head(x)
        return (scores, feats) if return_features else scores


def _as_input(frame, module):
    if isinstance(frame, torch.Tensor):
        x = frame
    else:
        import numpy as np
        x = torch.as_tensor(np.asarray(frame))
    x = x.to(module.head.weight.dtype)
    while x.dim() < 4:
        x = x.unsqueeze(0)
    return x


def discriminate(frame, module: PatchDiscriminator) -> PatchScoreMap:
    """Per-patch scores of ``frame`` and their mean (differentiable if ``frame`` is a tensor)."""
    scores = module(_as_input(frame, module))
    return PatchScoreMap(scores, scores.mean())


def extract_features(frame, module: PatchDiscriminator) -> list[torch.Tensor]:
    """Post-activation outputs of the four conv layers, in order."""
    _, feats = module(_as_input(frame, module), return_features=True)
    return feats
