"""Deformable-convolution alignment of three consecutive frames.

A small U-Net looks at the stacked triplet and predicts, for every pixel,
a displacement for each of the 3x3 kernel taps of each frame (54 channels
for three frames). One deformable convolution then samples the frames at
the displaced positions and fuses them into a single feature map.

Offset channel layout: ``c = (t * K * K + k) * 2 + d`` where ``t`` is the
frame, ``k = ky * K + kx`` the tap and ``d`` 0 for vertical, 1 for
horizontal displacement.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

N_FRAMES = 3
KERNEL = 3
OFFSET_CHANNELS = N_FRAMES * 2 * KERNEL * KERNEL


def offset_channels(frames: int = N_FRAMES, kernel: int = KERNEL) -> int:
    return frames * 2 * kernel * kernel


def bilinear_sample(plane, y, x):
    """Bilinearly interpolate ``plane`` at real coordinates ``(y, x)``.

    Neighbours outside the grid read as zero. ``y`` and ``x`` may be scalars
    or broadcastable arrays.
    """
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    wy, wx = y - y0, x - x0

    def at(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        return np.where(inside, plane[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0.0)

    out = ((1 - wy) * (1 - wx) * at(y0, x0) + (1 - wy) * wx * at(y0, x0 + 1)
           + wy * (1 - wx) * at(y0 + 1, x0) + wy * wx * at(y0 + 1, x0 + 1))
    return out[()] if out.ndim == 0 else out


def gather_bilinear(planes: torch.Tensor, y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Differentiable zero-padded bilinear sampling.

    ``planes`` is ``(N, H, W)``; ``y`` and ``x`` are ``(N, ...)`` pixel
    coordinates. Returns values shaped like ``y``. Gradients flow to the
    planes and to both coordinate tensors; at integer coordinates the
    derivative is taken from the cell below/right of the sample point.
    """
    n, h, w = planes.shape
    # one zero row/column before, two after: every clamped corner lands inside
    padded = F.pad(planes, (1, 2, 1, 2))
    wp = w + 3
    flat = padded.reshape(n, -1)
    # beyond one pixel outside the grid every neighbour is zero, so clamping is exact
    y = y.clamp(-1.0, float(h))
    x = x.clamp(-1.0, float(w))
    y0 = torch.floor(y)
    x0 = torch.floor(x)
    wy = y - y0
    wx = x - x0
    idx = ((y0.long() + 1) * wp + (x0.long() + 1)).reshape(n, -1)
    shape = y.shape
    v00 = torch.gather(flat, 1, idx).reshape(shape)
    v01 = torch.gather(flat, 1, idx + 1).reshape(shape)
    v10 = torch.gather(flat, 1, idx + wp).reshape(shape)
    v11 = torch.gather(flat, 1, idx + wp + 1).reshape(shape)
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    return top + wy * (bottom - top)


def grid_bilinear(planes: torch.Tensor, y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Same sampling as :func:`gather_bilinear` through ``F.grid_sample``.

    One fused kernel instead of four gathers. The [-1, 1] grid normalization
    is done in float64 so integer coordinates stay exact; the result is
    cast back to the dtype of ``planes``.
    """
    n, h, w = planes.shape
    shape = y.shape
    gx = x.reshape(n, -1, w).double() * (2.0 / max(w - 1, 1)) - 1.0
    gy = y.reshape(n, -1, w).double() * (2.0 / max(h - 1, 1)) - 1.0
    grid = torch.stack([gx, gy], dim=-1)
    out = F.grid_sample(planes.double().unsqueeze(1), grid, mode="bilinear", padding_mode="zeros",
                        align_corners=True)
    return out.reshape(shape).to(planes.dtype)


SAMPLERS = {"grid": grid_bilinear, "gather": gather_bilinear}


def deformable_conv(planes: torch.Tensor, offsets: torch.Tensor, weight: torch.Tensor,
                    bias: torch.Tensor | None = None, sampler: str = "grid") -> torch.Tensor:
    """Deformable convolution with one offset pair per (input plane, tap, pixel).

    Args:
        planes: ``(B, T, H, W)`` input planes (an unbatched ``(T, H, W)`` is accepted).
        offsets: ``(B, T*2*K*K, H, W)`` displacements, layout as in the module docstring.
        weight: ``(C, T, K, K)`` kernel, ``K`` odd.
        bias: optional ``(C,)``.
        sampler: ``"grid"`` (fast) or ``"gather"`` (reference).

    Returns:
        ``(B, C, H, W)`` features; stride 1 with implicit zero padding.
    """
    unbatched = planes.dim() == 3
    if unbatched:
        planes, offsets = planes.unsqueeze(0), offsets.unsqueeze(0)
    if planes.dim() != 4 or offsets.dim() != 4 or weight.dim() != 4:
        raise ShapeError("expected planes (B,T,H,W), offsets (B,2TK^2,H,W), weight (C,T,K,K)")
    b, t, h, w = planes.shape
    c_out, t_w, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}x{k2}")
    if t_w != t:
        raise ShapeError(f"weight expects {t_w} input planes, got {t}")
    if offsets.shape != (b, t * 2 * k * k, h, w):
        raise ShapeError(f"offsets must have shape {(b, t * 2 * k * k, h, w)}, got {tuple(offsets.shape)}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},)")

    off = offsets.reshape(b, t, k * k, 2, h, w)
    r = k // 2
    taps = torch.arange(k * k, device=planes.device)
    ty = (taps // k - r).to(planes.dtype).view(1, 1, k * k, 1, 1)
    tx = (taps % k - r).to(planes.dtype).view(1, 1, k * k, 1, 1)
    gy = torch.arange(h, device=planes.device, dtype=planes.dtype).view(1, 1, 1, h, 1)
    gx = torch.arange(w, device=planes.device, dtype=planes.dtype).view(1, 1, 1, 1, w)
    ys = gy + ty + off[:, :, :, 0]
    xs = gx + tx + off[:, :, :, 1]
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    samples = SAMPLERS[sampler](
        planes.reshape(b * t, h, w), ys.reshape(b * t, k * k, h, w), xs.reshape(b * t, k * k, h, w)
    )
    cols = samples.reshape(b, t * k * k, h * w)
    out = torch.matmul(weight.reshape(c_out, t * k * k), cols).reshape(b, c_out, h, w)
    if bias is not None:
        out = out + bias.view(1, c_out, 1, 1)
    return out[0] if unbatched else out


def _pad_to_multiple(x: torch.Tensor, multiple: int):
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


def _conv_block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.LeakyReLU(0.2),
    )


class OffsetUNet(nn.Module):
    """U-Net predicting the offset field from the stacked frames.

    ``levels`` stride-2 downsampling stages with channels doubling from
    ``base``, bilinear upsampling with concatenated skips on the way up.
    The output layer starts at zero, so a fresh network predicts no motion.
    """

    def __init__(self, in_frames: int = N_FRAMES, base: int = 32, levels: int = 3,
                 kernel: int = KERNEL):
        super().__init__()
        self.levels = levels
        widths = [base * 2 ** i for i in range(levels + 1)]
        self.inc = _conv_block(in_frames, widths[0])
        self.down = nn.ModuleList(_conv_block(widths[i], widths[i + 1], stride=2) for i in range(levels))
        self.up = nn.ModuleList(
            _conv_block(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(levels))
        )
        self.head = nn.Conv2d(widths[0], offset_channels(in_frames, kernel), 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        x, (h, w) = _pad_to_multiple(x, 2 ** self.levels)
        skips = [self.inc(x)]
        for down in self.down:
            skips.append(down(skips[-1]))
        y = skips.pop()
        for up in self.up:
            skip = skips.pop()
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = up(torch.cat([y, skip], dim=1))
        return self.head(y)[..., :h, :w]


class DeformableAlign(nn.Module):
    """Alignment module: offsets from :class:`OffsetUNet`, fusion by one deformable conv."""

    def __init__(self, channels: int = 64, unet_base: int = 32, unet_levels: int = 3,
                 frames: int = N_FRAMES, kernel: int = KERNEL):
        super().__init__()
        self.channels = channels
        self.offset_net = OffsetUNet(frames, unet_base, unet_levels, kernel)
        # parameter holder for the deformable kernel; also the zero-offset reference
        self.fuse = nn.Conv2d(frames, channels, kernel, padding=kernel // 2)

    def offsets(self, frames: torch.Tensor) -> torch.Tensor:
        return self.offset_net(frames)

    def forward(self, frames: torch.Tensor, return_offsets: bool = False):
        off = self.offset_net(frames)
        z = deformable_conv(frames, off, self.fuse.weight, self.fuse.bias)
        return (z, off) if return_offsets else z


def triplet_tensor(triplet, dtype=torch.float32) -> torch.Tensor:
    """A ``FrameTriplet`` (or ``(3, H, W)`` array) as a ``(1, 3, H, W)`` tensor."""
    arr = triplet.stack() if hasattr(triplet, "stack") else np.asarray(triplet)
    tensor = torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)
    return tensor.unsqueeze(0) if tensor.dim() == 3 else tensor


@torch.no_grad()
def predict_offsets(triplet, module: DeformableAlign) -> torch.Tensor:
    """Offset field ``(54, H, W)`` for one triplet."""
    x = triplet_tensor(triplet, next(module.parameters()).dtype)
    return module.offsets(x)[0]


@torch.no_grad()
def align(triplet, module: DeformableAlign) -> torch.Tensor:
    """Aligned feature map ``(C_a, H, W)`` for one triplet."""
    x = triplet_tensor(triplet, next(module.parameters()).dtype)
    return module(x)[0]
