"""Optical-flow alignment baseline.

Flow convention: ``warp(src, flow)(p) = src(p + flow(p))``, so the flow
estimated from ``src`` to ``dst`` maps every ``dst`` pixel to its match in
``src`` and ``warp(src, estimate_flow(src, dst)) ~= dst``. ``u`` is the
horizontal and ``v`` the vertical component, in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .deform import bilinear_sample, grid_bilinear
from .errors import ShapeError
from .frames import LumaFrame, as_luma


@dataclass(frozen=True, eq=False)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ShapeError("flow components differ in shape")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow contains non-finite values")

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


def _resize(a, shape):
    """Bilinear resize of a 2-D array to ``shape`` (pixel-centre aligned)."""
    h, w = a.shape
    yy = (np.arange(shape[0]) + 0.5) * h / shape[0] - 0.5
    xx = (np.arange(shape[1]) + 0.5) * w / shape[1] - 0.5
    grid = np.meshgrid(yy, xx, indexing="ij")
    return ndimage.map_coordinates(a, grid, order=1, mode="nearest")


def _pyramid(img, levels):
    pyr = [img]
    for _ in range(levels - 1):
        smooth = ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")
        pyr.append(smooth[::2, ::2])
    return pyr


def estimate_flow(src, dst, levels: int = 3, iterations: int = 3,
                  window: float = 2.0, reg: float = 1e-5) -> FlowField:
    """Coarse-to-fine dense Lucas-Kanade flow from ``src`` to ``dst``.

    At each pyramid level, starting from the upsampled coarser estimate,
    ``src`` is warped by the current flow and a Gaussian-windowed
    (``window`` = sigma in pixels) least-squares update is solved per
    pixel; ``reg`` damps the update in textureless regions.
    """
    s = np.asarray(as_luma(src).pixels, dtype=np.float64)
    d = np.asarray(as_luma(dst).pixels, dtype=np.float64)
    if s.shape != d.shape:
        raise ShapeError(f"frames differ in size: {s.shape} vs {d.shape}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    levels = min(levels, int(np.log2(min(s.shape))))
    pyr_s, pyr_d = _pyramid(s, levels), _pyramid(d, levels)
    u = np.zeros(pyr_s[-1].shape)
    v = np.zeros(pyr_s[-1].shape)
    for lvl in reversed(range(levels)):
        S, D = pyr_s[lvl], pyr_d[lvl]
        if u.shape != S.shape:
            u = 2.0 * _resize(u, S.shape)
            v = 2.0 * _resize(v, S.shape)
        yy, xx = np.mgrid[: S.shape[0], : S.shape[1]].astype(np.float64)
        for _ in range(iterations):
            warped = ndimage.map_coordinates(S, [yy + v, xx + u], order=1, mode="nearest")
            gy, gx = np.gradient(warped)
            it = warped - D
            g = lambda a: ndimage.gaussian_filter(a, window, mode="nearest")  # noqa: E731
            a11, a12, a22 = g(gx * gx) + reg, g(gx * gy), g(gy * gy) + reg
            b1, b2 = g(gx * it), g(gy * it)
            det = a11 * a22 - a12 * a12
            u -= (a22 * b1 - a12 * b2) / det
            v -= (a11 * b2 - a12 * b1) / det
    return FlowField(u, v)


def warp(frame, flow: FlowField) -> LumaFrame:
    """Backward warp: sample ``frame`` at ``p + flow(p)``, zero outside the frame."""
    f = as_luma(frame)
    if flow.shape != f.shape:
        raise ShapeError(f"flow {flow.shape} does not match frame {f.shape}")
    if not (np.any(flow.u) or np.any(flow.v)):
        return LumaFrame(f.pixels.copy())
    yy, xx = np.mgrid[: f.height, : f.width].astype(np.float64)
    out = bilinear_sample(f.pixels, yy + flow.v, xx + flow.u)
    return LumaFrame(np.clip(out, 0.0, 1.0).astype(np.float32))


def warp_tensor(planes: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Batched differentiable backward warp of ``(B, H, W)`` planes."""
    _, h, w = planes.shape
    gy = torch.arange(h, dtype=planes.dtype).view(1, h, 1)
    gx = torch.arange(w, dtype=planes.dtype).view(1, 1, w)
    return grid_bilinear(planes, gy + v.to(planes.dtype), gx + u.to(planes.dtype))


class FlowAlign(nn.Module):
    """Pairwise alternative to deformable alignment.

    Neighbours are warped onto the centre frame with two independently
    estimated flows, and the stack (warped prev, centre, warped next) is
    lifted to ``channels`` feature maps by a single 3x3 convolution, making
    it a drop-in replacement for :class:`~dcngan.deform.DeformableAlign`.
    """

    def __init__(self, channels: int = 64, levels: int = 3, iterations: int = 3):
        super().__init__()
        self.channels = channels
        self.levels = levels
        self.iterations = iterations
        self.lift = nn.Conv2d(3, channels, 3, padding=1)

    def warped_stack(self, frames: torch.Tensor) -> torch.Tensor:
        arr = frames.detach().cpu().numpy()
        us, vs = [], []
        for trip in arr:
            for src in (trip[0], trip[2]):
                fl = estimate_flow(np.clip(src, 0, 1), np.clip(trip[1], 0, 1), self.levels, self.iterations)
                us.append(fl.u)
                vs.append(fl.v)
        b, _, h, w = frames.shape
        u = torch.as_tensor(np.stack(us)).view(b, 2, h, w)
        v = torch.as_tensor(np.stack(vs)).view(b, 2, h, w)
        neighbours = frames[:, [0, 2]].reshape(b * 2, h, w)
        warped = warp_tensor(neighbours, u.reshape(b * 2, h, w), v.reshape(b * 2, h, w)).view(b, 2, h, w)
        return torch.stack([warped[:, 0], frames[:, 1], warped[:, 1]], dim=1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.lift(self.warped_stack(frames))


def flow_align(triplet, module: FlowAlign) -> torch.Tensor:
    """Aligned ``(C_a, H, W)`` features of one triplet via the flow backend."""
    from .deform import triplet_tensor

    with torch.no_grad():
        return module(triplet_tensor(triplet, module.lift.weight.dtype))[0]
