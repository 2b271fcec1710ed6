"""One-hot quantization-parameter codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedQPError

QP_SET: tuple[int, ...] = (22, 27, 32, 37)


@dataclass(frozen=True)
class QPCode:
    """One-hot QP indicator over a sorted QP set."""

    onehot: tuple[float, ...]
    qp_value: int

    def __post_init__(self):
        hot = [i for i, v in enumerate(self.onehot) if v == 1.0]
        if len(hot) != 1 or any(v not in (0.0, 1.0) for v in self.onehot):
            raise ValueError(f"not a one-hot vector: {self.onehot}")

    @property
    def index(self) -> int:
        return self.onehot.index(1.0)

    def as_array(self, dtype=np.float32) -> np.ndarray:
        return np.asarray(self.onehot, dtype=dtype)


def encode_qp(qp: int, qp_set=QP_SET) -> QPCode:
    """Return the one-hot code of ``qp``; the hot index is its rank in ``qp_set``."""
    levels = sorted(int(q) for q in qp_set)
    if int(qp) != qp or int(qp) not in levels:
        raise UnsupportedQPError(f"unsupported QP {qp!r}; valid QPs are {levels}")
    onehot = [0.0] * len(levels)
    onehot[levels.index(int(qp))] = 1.0
    return QPCode(tuple(onehot), int(qp))
