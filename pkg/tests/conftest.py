import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from terrain_shadow.heightfield import Body, HeightField

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def sun(elev_deg, az_deg=30.0):
    e, a = math.radians(elev_deg), math.radians(az_deg)
    return np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])


def make_body(fields, radius=1.0e5, max_height=5.0e3):
    n = fields[0].shape[0]
    hs = 2.0 * radius / n
    faces = tuple(HeightField(fields[f], hs, max_height, f, radius) for f in range(6))
    return Body(faces, radius, max_height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def overlapped_cells(a, b, cell):
    """Cells whose interior meets segment ab with positive length (Liang-Barsky)."""
    out = set()
    lo = np.floor(np.minimum(a, b) / cell).astype(int) - 1
    hi = np.floor(np.maximum(a, b) / cell).astype(int) + 1
    d = b - a
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            s0, s1 = 0.0, 1.0
            for k, idx in ((0, i), (1, j)):
                x0, x1 = idx * cell, (idx + 1) * cell
                if d[k] == 0.0:
                    # half-open cells, as texel lookup floors
                    if not x0 <= a[k] < x1:
                        s0, s1 = 1.0, 0.0
                    continue
                r0, r1 = (x0 - a[k]) / d[k], (x1 - a[k]) / d[k]
                s0, s1 = max(s0, min(r0, r1)), min(s1, max(r0, r1))
            if s1 - s0 > 1e-12:
                out.add((i, j))
    return out


def canonical_dda(a, b, cell):
    """Cells visited by stepping the segment at the cell-boundary crossings."""
    ts = {0.0, 1.0}
    d = b - a
    for k in range(2):
        if d[k] != 0.0:
            g0, g1 = sorted((a[k] / cell, b[k] / cell))
            for g in range(math.floor(g0) + 1, math.ceil(g1)):
                ts.add((g * cell - a[k]) / d[k])
    ts = sorted(ts)
    return {tuple(np.floor((a + 0.5 * (s0 + s1) * d) / cell).astype(int)) for s0, s1 in zip(ts, ts[1:]) if s1 > s0}
