"""Single-file sample cache for training and evaluation splits.

Layout (all little-endian)::

    offset  size        field
    0       8           magic  b"DCNGSMPL"
    8       4  uint32   format version (1)
    12      4  uint32   sample count N
    16      4  uint32   patch height H
    20      4  uint32   patch width W
    24      4N int32    QP label of each sample
    ..      16NHW f32   planes, shape (N, 4, H, W): target, prev, curr, next

Planes hold luminance in [0, 1]; prev/curr/next are the degraded triplet.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedInputError
from .frames import TrainingSample, degrade, sample_patches

MAGIC = b"DCNGSMPL"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


@dataclass
class SampleSet:
    """Tensor view of many training samples."""

    target: np.ndarray  # (N, H, W) float32
    degraded: np.ndarray  # (N, 3, H, W) float32
    qp: np.ndarray  # (N,) int32

    def __len__(self):
        return len(self.qp)

    @classmethod
    def from_samples(cls, samples: list[TrainingSample]) -> "SampleSet":
        if not samples:
            raise MalformedInputError("no samples")
        return cls(
            np.stack([s.target.pixels for s in samples]).astype(np.float32),
            np.stack([s.degraded.stack() for s in samples]).astype(np.float32),
            np.asarray([s.qp.qp_value for s in samples], dtype=np.int32),
        )

    def subset(self, mask) -> "SampleSet":
        return SampleSet(self.target[mask], self.degraded[mask], self.qp[mask])

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(
            np.concatenate([self.target, other.target]),
            np.concatenate([self.degraded, other.degraded]),
            np.concatenate([self.qp, other.qp]),
        )


def write_cache(samples, path) -> Path:
    ss = samples if isinstance(samples, SampleSet) else SampleSet.from_samples(samples)
    n, h, w = ss.target.shape
    planes = np.concatenate([ss.target[:, None], ss.degraded], axis=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, h, w))
        fh.write(ss.qp.astype("<i4").tobytes())
        fh.write(planes.astype("<f4").tobytes())
    return path


def read_cache(path) -> SampleSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MalformedInputError(f"{path}: truncated header")
    magic, version, n, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedInputError(f"{path}: not a sample cache")
    if version != VERSION:
        raise MalformedInputError(f"{path}: unsupported cache version {version}")
    expected = _HEADER.size + 4 * n + 16 * n * h * w
    if len(data) != expected:
        raise MalformedInputError(f"{path}: expected {expected} bytes, found {len(data)}")
    qp = np.frombuffer(data, "<i4", n, _HEADER.size).astype(np.int32)
    planes = np.frombuffer(data, "<f4", 4 * n * h * w, _HEADER.size + 4 * n).reshape(n, 4, h, w)
    planes = planes.astype(np.float32)
    return SampleSet(planes[:, 0].copy(), planes[:, 1:].copy(), qp)


def build_samples(sequences, qps, patch: int, count: int, seed: int,
                  degraded=None, stride: int = 1) -> SampleSet:
    """Degrade every raw sequence at every QP and crop ``count`` samples from each pair.

    ``degraded`` optionally maps ``(sequence index, qp)`` to an externally
    encoded version of that sequence, which then replaces the simulator.
    """
    out = None
    for i, seq in enumerate(sequences):
        for qp in qps:
            deg = (degraded or {}).get((i, qp))
            if deg is None:
                deg = [degrade(f, qp) for f in seq]
            samples = sample_patches(seq, deg, patch, count, seed=[seed, i, qp], qp=qp,
                                     stride=stride, qp_set=sorted(qps))
            part = SampleSet.from_samples(samples)
            out = part if out is None else out.concat(part)
    return out
