"""Procedural test video: textured canvases panned with sub-pixel motion."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .frames import LumaFrame


def texture(height: int, width: int, seed: int, shapes: int = 12) -> np.ndarray:
    """A natural-looking luminance image in roughly [0.1, 0.9].

    Multi-octave filtered noise with a 1/f-like spectrum plus a few flat
    shapes with hard edges, so both smooth regions and discontinuities
    are present.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for sigma in (16.0, 8.0, 4.0, 2.0, 1.0):
        layer = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
        img += sigma * layer / (layer.std() + 1e-12)
    yy, xx = np.mgrid[:height, :width]
    for _ in range(shapes):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(3, max(4.0, min(height, width) / 6))
        level = rng.uniform(-1.5, 1.5) * img.std()
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.4, 1.6))
        img[mask] = img[mask] * 0.3 + level
    img -= img.min()
    img /= img.max() + 1e-12
    return 0.1 + 0.8 * img


def pan_sequence(canvas: np.ndarray, n_frames: int, height: int, width: int,
                 velocity=(0.0, 0.0), origin=None) -> list[LumaFrame]:
    """Crop ``n_frames`` windows from ``canvas`` moving by ``velocity`` px/frame."""
    vy, vx = velocity
    if origin is None:
        origin = ((canvas.shape[0] - height) / 2 - vy * (n_frames - 1) / 2,
                  (canvas.shape[1] - width) / 2 - vx * (n_frames - 1) / 2)
    yy, xx = np.mgrid[:height, :width].astype(np.float64)
    frames = []
    for t in range(n_frames):
        oy, ox = origin[0] + vy * t, origin[1] + vx * t
        win = ndimage.map_coordinates(canvas, [yy + oy, xx + ox], order=3, mode="reflect")
        frames.append(LumaFrame(np.clip(win, 0.0, 1.0).astype(np.float32)))
    return frames


def synthetic_sequence(n_frames: int = 7, height: int = 64, width: int = 64, seed: int = 0,
                       max_speed: float = 2.0) -> list[LumaFrame]:
    """A seeded panning sequence with a random sub-pixel velocity."""
    rng = np.random.default_rng([seed, 1])
    speed = rng.uniform(0.3, max_speed)
    angle = rng.uniform(0, 2 * np.pi)
    velocity = (speed * np.sin(angle), speed * np.cos(angle))
    margin = int(np.ceil(max_speed * n_frames)) + 8
    canvas = texture(height + 2 * margin, width + 2 * margin, seed)
    return pan_sequence(canvas, n_frames, height, width, velocity)
