"""QP-adaptive enhancement network and the full generator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .deform import DeformableAlign, triplet_tensor
from .errors import ShapeError
from .frames import LumaFrame
from .qp import QP_SET, QPCode, encode_qp

N_BLOCKS = 9


@dataclass
class GeneratorConfig:
    align_channels: int = 64
    base_channels: int = 64
    unet_base: int = 32
    unet_levels: int = 3
    n_blocks: int = N_BLOCKS
    qp_set: tuple = QP_SET
    share_fc: bool = False
    global_skip: bool = False
    modulate_after_bn: bool = True
    align_backend: str = "dconv"
    flow_levels: int = 3
    flow_iters: int = 3

    def __post_init__(self):
        self.qp_set = tuple(sorted(int(q) for q in self.qp_set))
        if self.align_backend not in ("dconv", "flow"):
            raise ValueError(f"unknown align backend {self.align_backend!r}")

    @property
    def res_channels(self) -> int:
        return 4 * self.base_channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qp_set"] = list(self.qp_set)
        return d


def qp_scales(code, fc: nn.Linear) -> torch.Tensor:
    """Positive per-channel scales ``softplus(fc(code))``.

    ``code`` may be a :class:`QPCode` or a ``(B, |Q|)`` one-hot tensor.
    """
    if isinstance(code, QPCode):
        code = torch.as_tensor(code.as_array(), dtype=fc.weight.dtype).unsqueeze(0)
    return F.softplus(fc(code))


class ModulatedResBlock(nn.Module):
    """Residual block whose first conv output is scaled channel-wise by the QP embedding.

    ``out = x + conv2(relu(bn(conv1(x)) * s))`` with ``s = softplus(fc(q))``.
    """

    def __init__(self, channels: int, n_qp: int = len(QP_SET), fc: nn.Linear | None = None,
                 modulate_after_bn: bool = True):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.fc = fc if fc is not None else nn.Linear(n_qp, channels)
        self.modulate_after_bn = modulate_after_bn

    def scales(self, code) -> torch.Tensor:
        return qp_scales(code, self.fc)

    def forward(self, x, code=None, scales=None):
        if scales is None:
            scales = self.scales(code)
        if scales.shape[-1] != x.shape[1]:
            raise ShapeError(f"{scales.shape[-1]} scales for {x.shape[1]} channels")
        s = scales.reshape(-1, x.shape[1], 1, 1)
        h = self.conv1(x)
        h = self.bn(h) * s if self.modulate_after_bn else self.bn(h * s)
        return x + self.conv2(F.relu(h))


def _conv_bn(cin, cout, k, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2),
        nn.BatchNorm2d(cout),
        nn.LeakyReLU(0.2),
    )


class Generator(nn.Module):
    """Alignment followed by the QP-modulated encoder / residual / decoder stack."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = cfg = config or GeneratorConfig()
        if cfg.align_backend == "dconv":
            self.align = DeformableAlign(cfg.align_channels, cfg.unet_base, cfg.unet_levels)
        else:
            from .flow import FlowAlign
            self.align = FlowAlign(cfg.align_channels, cfg.flow_levels, cfg.flow_iters)
        b = cfg.base_channels
        c_r = cfg.res_channels
        n_qp = len(cfg.qp_set)
        self.encoder = nn.Sequential(
            _conv_bn(cfg.align_channels, b, 7),
            _conv_bn(b, 2 * b, 3, stride=2),
            _conv_bn(2 * b, c_r, 3, stride=2),
        )
        shared = nn.Linear(n_qp, c_r) if cfg.share_fc else None
        self.blocks = nn.ModuleList(
            ModulatedResBlock(c_r, n_qp, shared, cfg.modulate_after_bn) for _ in range(cfg.n_blocks)
        )
        self.up1 = _conv_bn(c_r, 2 * b, 3)
        self.up2 = _conv_bn(2 * b, b, 3)
        self.head = nn.Conv2d(b, 1, 7, padding=3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def code_tensor(self, qp) -> torch.Tensor:
        """One-hot ``(B, |Q|)`` tensor from an int, a sequence of ints, QPCodes or a tensor."""
        dtype = self.head.weight.dtype
        if isinstance(qp, torch.Tensor):
            return qp.to(dtype)
        if isinstance(qp, (int, np.integer, QPCode)):
            qp = [qp]
        codes = [q if isinstance(q, QPCode) else encode_qp(int(q), self.config.qp_set) for q in qp]
        return torch.as_tensor(np.stack([c.as_array() for c in codes]), dtype=dtype)

    def encode(self, z):
        return self.encoder(z)

    def modulate(self, feat, code):
        for block in self.blocks:
            feat = block(feat, code)
        return feat

    def decode(self, feat, size):
        h = F.interpolate(feat, scale_factor=2, mode="bilinear", align_corners=False)
        h = self.up1(h)
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = self.up2(h)
        return self.head(h)[..., :size[0], :size[1]]

    def enhance(self, z, code, curr=None):
        """Enhancement module: aligned features ``z`` and one-hot ``code`` to a [0, 1] frame."""
        h, w = z.shape[-2:]
        ph, pw = (-h) % 4, (-w) % 4
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "replicate"
            z = F.pad(z, (0, pw, 0, ph), mode=mode)
        logits = self.decode(self.modulate(self.encode(z), code), (h, w))
        if self.config.global_skip and curr is not None:
            c = curr.clamp(1e-4, 1 - 1e-4)
            logits = logits + torch.log(c) - torch.log1p(-c)
        return torch.sigmoid(logits)

    def forward(self, frames, qp):
        """``frames``: ``(B, 3, H, W)`` degraded triplets; ``qp``: see :meth:`code_tensor`."""
        code = self.code_tensor(qp)
        return self.enhance(self.align(frames), code, frames[:, 1:2])


def enhance(z, code, generator: Generator) -> torch.Tensor:
    """Run the enhancement module on one aligned feature map ``(C_a, H, W)``."""
    with torch.no_grad():
        return generator.enhance(z.unsqueeze(0), generator.code_tensor(code))[0, 0]


def generate(triplet, qp: int, generator: Generator) -> LumaFrame:
    """Enhanced centre frame for one triplet. Uses inference-mode normalization."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            x = triplet_tensor(triplet, generator.head.weight.dtype)
            out = generator(x, qp)[0, 0]
    finally:
        generator.train(was_training)
    return LumaFrame(out.float().numpy())


def unit_scale_bias() -> float:
    """Bias for which softplus returns exactly one."""
    return math.log(math.e - 1.0)
