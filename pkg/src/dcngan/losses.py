"""Adversarial, perceptual and feature-matching objectives.

The perceptual and feature-matching distances follow the same reduction:
for each selected layer, the L1 norm over channels at every spatial
position, averaged over positions, summed over layers (and averaged over
the batch). ``channel_reduction="mean"`` divides by the channel count as
well, i.e. averages over every element of the layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn

from .discriminator import PatchScoreMap
from .errors import InputTooSmallError, ShapeError, TrainingDivergenceError

logger = logging.getLogger(__name__)

VGG19_LAYOUT = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
                512, 512, 512, 512, "M", 512, 512, 512, 512)
# ReLU outputs closing each of the five conv stages, indexed as in torchvision's vgg19().features
STAGE_ENDS = (3, 8, 17, 26, 35)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class VGGLossConfig:
    layer_ids: tuple = STAGE_ENDS
    width: float = 1.0
    weights_path: str | None = None
    seed: int = 0
    channel_reduction: str = "sum"

    def __post_init__(self):
        self.layer_ids = tuple(int(i) for i in self.layer_ids)
        if not self.layer_ids or any(b <= a for a, b in zip(self.layer_ids, self.layer_ids[1:])):
            raise ValueError("layer_ids must be a non-empty strictly increasing sequence")
        if self.channel_reduction not in ("sum", "mean"):
            raise ValueError("channel_reduction must be 'sum' or 'mean'")
        if self.weights_path is not None and self.width != 1.0:
            raise ValueError("pretrained weights require width 1.0")


class FeatureExtractor(nn.Module):
    """Frozen VGG-19 feature stack returning the configured ReLU outputs.

    Loads torchvision-layout weights from ``cfg.weights_path`` when given;
    otherwise the network is randomly initialized from ``cfg.seed`` (and
    may be narrowed with ``cfg.width``), which keeps every distance
    property intact while needing no download.
    """

    def __init__(self, cfg: VGGLossConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or VGGLossConfig()
        layers: list[nn.Module] = []
        cin = 3
        for v in VGG19_LAYOUT:
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                cout = max(1, int(round(v * cfg.width)))
                layers += [nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU()]
                cin = cout
        if cfg.layer_ids[-1] >= len(layers):
            raise ValueError(f"layer ids beyond the VGG-19 feature stack: {cfg.layer_ids}")
        self.features = nn.Sequential(*layers[: cfg.layer_ids[-1] + 1])
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        if cfg.weights_path:
            self._load(cfg.weights_path)
        else:
            logger.warning(
                "no VGG weights given: using a randomly initialized extractor (seed %d, width %.3g); "
                "perceptual distances are not comparable to pretrained-VGG values", cfg.seed, cfg.width,
            )
            gen = torch.Generator().manual_seed(cfg.seed)
            for m in self.features:
                if isinstance(m, nn.Conv2d):
                    fan_out = m.out_channels * 9
                    with torch.no_grad():
                        m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_out))
                        m.bias.zero_()
        self.requires_grad_(False)
        self.eval()
        pools = sum(isinstance(m, nn.MaxPool2d) for m in self.features)
        self.min_size = 2 ** pools

    def _load(self, path):
        state = torch.load(Path(path), map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
        own = self.features.state_dict()
        picked = {}
        for key in own:
            for cand in (key, f"features.{key}"):
                if cand in state:
                    picked[key] = state[cand]
                    break
            else:
                raise KeyError(f"{path}: missing VGG parameter {key}")
        self.features.load_state_dict(picked)

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, x) -> list[torch.Tensor]:
        """``x``: ``(B, 1, H, W)`` luminance in [0, 1]."""
        if min(x.shape[-2:]) < self.min_size:
            raise InputTooSmallError(
                f"feature extractor needs at least {self.min_size} pixels per side, got {tuple(x.shape[-2:])}"
            )
        x = x.expand(-1, 3, -1, -1) if x.shape[1] == 1 else x
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        out = []
        wanted = set(self.cfg.layer_ids)
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in wanted:
                out.append(x)
        return out


def feature_distance(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor],
                     channel_reduction: str = "sum", channel_weights=None) -> torch.Tensor:
    """Layer-summed spatial mean of per-position L1 distances between two feature stacks.

    Returns the batch mean. ``channel_weights`` optionally rescales the
    channels of each layer before the norm.
    """
    if len(a) != len(b):
        raise ShapeError(f"feature stacks have {len(a)} and {len(b)} layers")
    total = 0.0
    for i, (fa, fb) in enumerate(zip(a, b)):
        if fa.shape != fb.shape:
            raise ShapeError(f"layer {i}: shapes {tuple(fa.shape)} and {tuple(fb.shape)} differ")
        diff = (fa - fb).abs()
        if channel_weights is not None:
            diff = diff * channel_weights[i].to(diff).view(1, -1, 1, 1)
        per_pos = diff.sum(1) if channel_reduction == "sum" else diff.mean(1)
        total = total + per_pos.mean()
    return torch.as_tensor(total)


def _frame_tensor(x, dtype=None):
    if not isinstance(x, torch.Tensor):
        import numpy as np
        x = torch.as_tensor(np.asarray(x))
    while x.dim() < 4:
        x = x.unsqueeze(0)
    return x if dtype is None else x.to(dtype)


def vgg_loss(x, x_hat, extractor: FeatureExtractor) -> torch.Tensor:
    """Perceptual distance between target ``x`` and ``x_hat`` in VGG feature space."""
    dtype = extractor.mean.dtype if not isinstance(x_hat, torch.Tensor) else x_hat.dtype
    x = _frame_tensor(x, dtype)
    x_hat = _frame_tensor(x_hat, dtype)
    if x.shape != x_hat.shape:
        raise ShapeError(f"frames differ in shape: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    with torch.no_grad():
        fx = extractor(x)
    return feature_distance(fx, extractor(x_hat), extractor.cfg.channel_reduction)


def fm_loss(real_feats, fake_feats, channel_reduction: str = "sum") -> torch.Tensor:
    """Feature matching over discriminator layers; real features carry no gradient."""
    return feature_distance([f.detach() for f in real_feats], fake_feats, channel_reduction)


def _scores(s):
    return s.scores if isinstance(s, PatchScoreMap) else torch.as_tensor(s)


def gan_loss_d(scores_real, scores_fake) -> torch.Tensor:
    """Least-squares discriminator loss: real patches toward 1, fake patches toward 0."""
    real, fake = _scores(scores_real), _scores(scores_fake)
    return ((real - 1) ** 2).mean() + (fake ** 2).mean()


def gan_loss_g(scores_fake) -> torch.Tensor:
    """Least-squares generator loss: fake patches toward 1."""
    return ((_scores(scores_fake) - 1) ** 2).mean()


def total_g_loss(l_gan_g, l_vgg, l_fm, weights=(1.0, 1.0, 1.0), step=None):
    """Weighted sum of the generator terms; unit weights by default.

    Raises TrainingDivergenceError naming the first non-finite term.
    """
    terms = {"l_gan_g": l_gan_g, "l_vgg": l_vgg, "l_fm": l_fm}
    for name, value in terms.items():
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise TrainingDivergenceError(f"non-finite {name} ({v}) at step {step}", step=step, term=name)
    return weights[0] * l_gan_g + weights[1] * l_vgg + weights[2] * l_fm


@dataclass
class LossReport:
    l_gan_g: float
    l_gan_d: float
    l_vgg: float
    l_fm: float
    total_g: float

    FIELDS = ("l_gan_g", "l_gan_d", "l_vgg", "l_fm", "total_g")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]
