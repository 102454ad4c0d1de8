"""Maximum mipmap pyramid: each coarser texel holds the max of its 2x2 children."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .heightfield import HeightField


@dataclass(frozen=True)
class MaxMipPyramid:
    levels: tuple
    # levels concatenated row-major, for the compiled kernels
    packed: np.ndarray
    offsets: np.ndarray
    # (1 / height ratio, horizontal_scale * N / body_radius)
    scales: tuple = (1.0, 1.0)
    horizontal_scale: float = 1.0
    vertical_scale: float = 1.0

    @property
    def N(self) -> int:
        return self.levels[0].shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def delta_M(self, m: int) -> float:
        """Texel edge length at level ``m`` in texture units."""
        return 2.0**m / self.N

    def light_radius(self, angular_radius: float) -> float:
        """Angular light radius converted to cost slope units."""
        return math.tan(angular_radius) * self.horizontal_scale * self.N / self.vertical_scale


def build_max_mipmap(hf: HeightField | np.ndarray) -> MaxMipPyramid:
    if not isinstance(hf, HeightField):
        hf = HeightField(np.asarray(hf, dtype=np.float64))
    base = hf.values
    levels = [np.array(base, dtype=np.float64)]
    while levels[-1].shape[0] > 1:
        a = levels[-1]
        levels.append(np.maximum(np.maximum(a[0::2, 0::2], a[1::2, 0::2]), np.maximum(a[0::2, 1::2], a[1::2, 1::2])))
    offsets = np.zeros(len(levels) + 1, dtype=np.int64)
    for m, lv in enumerate(levels):
        lv.setflags(write=False)
        offsets[m + 1] = offsets[m] + lv.size
    packed = np.concatenate([lv.ravel() for lv in levels])
    packed.setflags(write=False)
    n = base.shape[0]
    scales = (1.0 / hf.height_ratio, hf.horizontal_scale * n / hf.body_radius)
    return MaxMipPyramid(tuple(levels), packed, offsets, scales, hf.horizontal_scale, hf.vertical_scale)


@njit(cache=True)
def fetch_max(packed, offsets, n0, m, i, j):
    """Texel (i=column, j=row) of level m, indices clamped to the level."""
    n = n0 >> m
    i = min(max(i, 0), n - 1)
    j = min(max(j, 0), n - 1)
    return packed[offsets[m] + j * n + i]


def sample_max(p: MaxMipPyramid, t, m: int) -> float:
    """Nearest-texel max height at level ``m`` for texture coordinate ``t``."""
    if not 0 <= m < p.num_levels:
        raise IndexError(f"mip level {m} out of range 0..{p.num_levels - 1}")
    n = p.N >> m
    u, v = t
    i = min(max(int(math.floor(u * n)), 0), n - 1)
    j = min(max(int(math.floor(v * n)), 0), n - 1)
    return float(p.levels[m][j, i])


def level_as_field(p: MaxMipPyramid, m: int, like: HeightField | None = None) -> HeightField:
    vals = p.levels[m]
    if like is None:
        return HeightField(vals)
    return HeightField(vals, like.horizontal_scale * 2**m, like.vertical_scale, like.face_id, like.body_radius)
