"""Luminance frames, synthetic compression, triplets and patch sampling.

Every frame entering the package is a 2-D float32 array in ``[0, 1]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn

from .errors import (
    EmptyInputError,
    InvalidPatchError,
    InvalidQPError,
    MalformedInputError,
    ShapeError,
    UnsupportedFormatError,
)
from .qp import QPCode, encode_qp

logger = logging.getLogger(__name__)

BLOCK = 8
MIN_SIZE = 8
FORMATS = ("yuv420p", "rgb24", "gray")
BT601 = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class LumaFrame:
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise ShapeError(f"luma frame must be 2-D, got shape {p.shape}")
        if p.shape[0] < MIN_SIZE or p.shape[1] < MIN_SIZE:
            raise ShapeError(f"luma frame must be at least {MIN_SIZE}x{MIN_SIZE}, got {p.shape}")
        p = p.astype(np.float32, copy=False)
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise MalformedInputError("luma values must be finite and within [0, 1]")
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __array__(self, dtype=None, copy=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)


@dataclass(frozen=True, eq=False)
class FrameTriplet:
    prev: LumaFrame
    curr: LumaFrame
    next: LumaFrame
    frame_index: int = 0

    def __post_init__(self):
        if not (self.prev.shape == self.curr.shape == self.next.shape):
            raise ShapeError(
                f"triplet frames differ in size: {self.prev.shape}, {self.curr.shape}, {self.next.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.curr.shape

    def stack(self) -> np.ndarray:
        """Return the three planes as a ``(3, H, W)`` array."""
        return np.stack([self.prev.pixels, self.curr.pixels, self.next.pixels])


@dataclass(frozen=True, eq=False)
class TrainingSample:
    degraded: FrameTriplet
    target: LumaFrame
    qp: QPCode

    def __post_init__(self):
        if self.degraded.shape != self.target.shape:
            raise ShapeError("degraded triplet and target differ in size")


def as_luma(frame) -> LumaFrame:
    return frame if isinstance(frame, LumaFrame) else LumaFrame(np.asarray(frame))


def extract_luma(buffer, fmt: str, width: int, height: int) -> LumaFrame:
    """Extract the luminance plane of one 8-bit frame as a [0, 1] ``LumaFrame``.

    ``fmt`` is one of ``"yuv420p"`` (planar Y, U, V with 2x2 chroma
    subsampling), ``"rgb24"`` (interleaved RGB, BT.601 luma weights) or
    ``"gray"``. ``buffer`` may be bytes or a uint8 array.
    """
    if fmt not in FORMATS:
        raise UnsupportedFormatError(f"unknown pixel format {fmt!r}; expected one of {FORMATS}")
    data = np.frombuffer(buffer, dtype=np.uint8) if isinstance(buffer, (bytes, bytearray, memoryview)) \
        else np.asarray(buffer, dtype=np.uint8).ravel()
    n = width * height
    if fmt == "yuv420p":
        expected = n + 2 * ((width + 1) // 2) * ((height + 1) // 2)
    elif fmt == "rgb24":
        expected = 3 * n
    else:
        expected = n
    if data.size != expected:
        raise MalformedInputError(
            f"{fmt} frame of {width}x{height} needs {expected} bytes, got {data.size}"
        )
    if fmt == "rgb24":
        rgb = data.reshape(height, width, 3).astype(np.float64)
        y = rgb @ np.asarray(BT601)
    else:
        y = data[:n].reshape(height, width).astype(np.float64)
    return LumaFrame((y / 255.0).astype(np.float32))


def qstep(qp: float) -> float:
    """HEVC quantization step size for ``qp``, on the 8-bit pixel scale."""
    return 2.0 ** ((qp - 4) / 6.0)


def degrade(frame, qp: int) -> LumaFrame:
    """Simulate block-transform compression of ``frame`` at ``qp``.

    The frame (on the 8-bit scale) is zero-padded to whole 8x8 blocks, each
    block goes through an orthonormal 2-D DCT-II, coefficients are uniformly
    quantized with the HEVC step ``2 ** ((qp - 4) / 6)``, and the result is
    inverse transformed, cropped and clipped back to [0, 1].
    """
    if isinstance(qp, bool) or not float(qp).is_integer() or not 0 <= qp <= 51:
        raise InvalidQPError(f"qp must be an integer in [0, 51], got {qp!r}")
    pixels = as_luma(frame).pixels.astype(np.float64) * 255.0
    h, w = pixels.shape
    hp, wp = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    padded = np.zeros((hp, wp))
    padded[:h, :w] = pixels
    blocks = padded.reshape(hp // BLOCK, BLOCK, wp // BLOCK, BLOCK).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    step = qstep(qp)
    coef = np.round(coef / step) * step
    rec = idctn(coef, type=2, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 2, 1, 3).reshape(hp, wp)[:h, :w]
    return LumaFrame(np.clip(rec / 255.0, 0.0, 1.0).astype(np.float32))


def make_triplets(sequence: Sequence) -> list[FrameTriplet]:
    """One triplet per frame; sequence ends are handled by edge replication."""
    frames = [as_luma(f) for f in sequence]
    if not frames:
        raise EmptyInputError("cannot build triplets from an empty sequence")
    last = len(frames) - 1
    return [
        FrameTriplet(frames[max(t - 1, 0)], frames[t], frames[min(t + 1, last)], t)
        for t in range(len(frames))
    ]


def sample_patches(raw_seq, degraded_seq, patch: int, count: int, seed: int,
                   qp: int, stride: int = 1, qp_set=None) -> list[TrainingSample]:
    """Crop ``count`` aligned training samples from a raw/degraded sequence pair.

    Each sample picks a frame index and a window uniformly at random (window
    origins restricted to multiples of ``stride``); the same window is cut
    from the raw target and from the three degraded triplet frames.
    """
    raw = [as_luma(f) for f in raw_seq]
    deg = [as_luma(f) for f in degraded_seq]
    if not raw:
        raise EmptyInputError("empty sequence")
    if len(raw) != len(deg):
        raise ShapeError(f"raw has {len(raw)} frames, degraded has {len(deg)}")
    shape = raw[0].shape
    if any(f.shape != shape for f in raw + deg):
        raise ShapeError("all frames must share one size")
    if patch < 1 or patch > min(shape):
        raise InvalidPatchError(f"patch {patch} does not fit in frames of size {shape}")
    code = encode_qp(qp) if qp_set is None else encode_qp(qp, qp_set)
    triplets = make_triplets(deg)
    rng = np.random.default_rng(seed)
    ys = np.arange(0, shape[0] - patch + 1, stride)
    xs = np.arange(0, shape[1] - patch + 1, stride)
    samples = []
    for _ in range(count):
        t = int(rng.integers(len(raw)))
        y = int(ys[rng.integers(len(ys))])
        x = int(xs[rng.integers(len(xs))])
        win = (slice(y, y + patch), slice(x, x + patch))
        trip = triplets[t]
        cut = lambda f: LumaFrame(f.pixels[win])  # noqa: E731
        samples.append(TrainingSample(
            FrameTriplet(cut(trip.prev), cut(trip.curr), cut(trip.next), t),
            cut(raw[t]),
            code,
        ))
    return samples


# -- frame I/O ---------------------------------------------------------------

def read_png_dir(path) -> list[LumaFrame]:
    """Read ``%06d.png`` frames (any mode; converted to 8-bit grayscale) in order."""
    from PIL import Image

    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG frames in {path}")
    frames = []
    for f in files:
        with Image.open(f) as im:
            if im.mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"))
                frames.append(extract_luma(arr, "rgb24", im.width, im.height))
            else:
                frames.append(extract_luma(np.asarray(im.convert("L")), "gray", im.width, im.height))
    return frames


def to_uint8(frame) -> np.ndarray:
    return np.round(np.clip(np.asarray(as_luma(frame).pixels), 0, 1) * 255.0).astype(np.uint8)


def write_png_dir(frames, path) -> list[Path]:
    from PIL import Image

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, f in enumerate(frames):
        target = out / f"{i:06d}.png"
        Image.fromarray(to_uint8(f), mode="L").save(target)
        written.append(target)
    return written


def read_yuv420(path, width: int, height: int) -> list[LumaFrame]:
    """Read the Y planes of a raw planar 8-bit YUV 4:2:0 file."""
    frame_bytes = width * height + 2 * ((width + 1) // 2) * ((height + 1) // 2)
    data = Path(path).read_bytes()
    if len(data) == 0 or len(data) % frame_bytes:
        raise MalformedInputError(
            f"{path}: size {len(data)} is not a multiple of the {width}x{height} frame size {frame_bytes}"
        )
    return [
        extract_luma(data[i:i + frame_bytes], "yuv420p", width, height)
        for i in range(0, len(data), frame_bytes)
    ]


def load_frames(path, width: int | None = None, height: int | None = None) -> list[LumaFrame]:
    """Load a PNG frame directory or, given dimensions, a raw ``.yuv`` file."""
    p = Path(path)
    if p.is_dir():
        return read_png_dir(p)
    if width is None or height is None:
        raise MalformedInputError("raw YUV input needs --width and --height")
    return read_yuv420(p, width, height)
