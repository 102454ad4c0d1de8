"""Reference shadow computations: brute-force minimization, uniform stepping
and distributed (multi-ray) tracing against the bilinear height field."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .heightfield import HeightField, bilinear_sample
from .shadow import _compute_T, _occlusion, n_dot_nL


def _project(R):
    return 0.5 * R[0] / R[2] + 0.5, 0.5 * R[1] / R[2] + 0.5


def _crossing(a, ab, i, j, n):
    """Parameter range of a + s*ab, s in [0,1], inside texel (i, j)."""
    lo, hi = 0.0, 1.0
    for k, idx in ((0, i), (1, j)):
        x0, x1 = idx / n, (idx + 1) / n
        if ab[k] == 0.0:
            continue
        s0, s1 = (x0 - a[k]) / ab[k], (x1 - a[k]) / ab[k]
        lo, hi = max(lo, min(s0, s1)), min(hi, max(s0, s1))
    return lo, hi


def brute_force_min(p, L_hat, hf: HeightField, length: float, resolution: int | None = None, start: float = 0.0):
    """Exhaustive ``min (H - h)`` over base texels crossed by a shadow ray.

    The ray covers object-space distances ``[start, start + length]`` from
    ``p``. Every texel under the ray footprint whose centre projects inside
    that range is evaluated at the ray point above its centre. Returns
    ``(min_delta, argmin_distance)``; ``argmin_distance`` is measured from
    ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    L = np.asarray(L_hat, dtype=np.float64)
    L = L / np.linalg.norm(L)
    n = hf.N
    inv_ratio = 1.0 / hf.height_ratio
    a = np.array(_project(p + start * L))
    b = np.array(_project(p + (start + length) * L))
    ab = b - a
    seg2 = float(ab @ ab)
    span = math.sqrt(seg2) * n
    resolution = resolution or n
    steps = max(resolution, int(8 * span) + 2)
    ss = np.linspace(0.0, 1.0, steps + 1)
    pts = a[None, :] + ss[:, None] * ab[None, :]
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    cells = {
        (min(int(math.floor(u * n)), n - 1), min(int(math.floor(v * n)), n - 1))
        for u, v in pts[inside]
    }

    def along(d):
        return np.array(_project(p + d * L))

    best = (math.inf, -1.0)
    for i, j in sorted(cells):
        c = np.array([(i + 0.5) / n, (j + 0.5) / n])
        s = float((c - a) @ ab) / seg2
        # clamp into the part of the footprint inside this texel
        lo, hi = _crossing(a, ab, i, j, n)
        s = min(max(s, lo), hi)
        target = a + s * ab
        k = int(np.argmax(np.abs(ab)))
        d = brentq(lambda d: along(d)[k] - target[k], start, start + length, xtol=1e-15, rtol=1e-15)
        H = (np.linalg.norm(p + d * L) - 1.0) * inv_ratio
        delta = H - hf.values[j, i]
        if delta < best[0] or (delta == best[0] and d > best[1]):
            best = (float(delta), float(d))
    return best


# ----------------------------------------------------------------- samplers


@dataclass(frozen=True)
class LightDiscSampler:
    """Stratified concentric-map samples over a disc light of given angular radius."""

    direction: tuple
    angular_radius: float
    n: int = 64
    seed: int = 0

    def offsets(self) -> np.ndarray:
        """(n, 2) tangent-plane offsets (radians, small-angle) inside the disc."""
        rng = np.random.default_rng(self.seed)
        k = int(math.ceil(math.sqrt(self.n)))
        idx = np.arange(self.n)
        # jittered k x k strata, truncated to n
        a = (idx % k + rng.random(self.n)) / k * 2.0 - 1.0
        b = (idx // k + rng.random(self.n)) / int(math.ceil(self.n / k)) * 2.0 - 1.0
        r = np.where(np.abs(a) > np.abs(b), a, b)
        phi = np.where(
            np.abs(a) > np.abs(b),
            (math.pi / 4) * np.divide(b, a, out=np.zeros_like(a), where=a != 0),
            math.pi / 2 - (math.pi / 4) * np.divide(a, b, out=np.zeros_like(a), where=b != 0),
        )
        return self.angular_radius * np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)

    def directions(self, frame_up=None) -> np.ndarray:
        """Unit sample directions inside the cone around ``direction``."""
        return disc_directions(np.asarray(self.direction, dtype=np.float64), self.offsets(), frame_up)


def disc_directions(center, offsets, frame_up=None):
    c = center / np.linalg.norm(center)
    up = np.array([0.0, 0.0, 1.0]) if frame_up is None else np.asarray(frame_up, dtype=np.float64)
    e1 = np.cross(c, up)
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.cross(c, [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    ang = np.hypot(offsets[:, 0], offsets[:, 1])
    phi = np.arctan2(offsets[:, 1], offsets[:, 0])
    d = (
        np.cos(ang)[:, None] * c[None, :]
        + np.sin(ang)[:, None] * (np.cos(phi)[:, None] * e1[None, :] + np.sin(phi)[:, None] * e2[None, :])
    )
    return d / np.linalg.norm(d, axis=1)[:, None]


# ----------------------------------------------------------------- marching


@njit(cache=True)
def _march_blocked(px, py, pz, dx, dy, dz, values, inv_ratio, step_tex, start_tex, max_steps):
    """True when the ray dips below the bilinear surface before leaving it."""
    t = _compute_T(px, py, pz, dx, dy, dz, start_tex)
    if t < 0.0:
        # vertical ray: rises immediately
        return False
    for _ in range(max_steps):
        rx, ry, rz = px + dx * t, py + dy * t, pz + dz * t
        if rz <= 0.0:
            return False
        u = 0.5 * rx / rz + 0.5
        v = 0.5 * ry / rz + 0.5
        if u < 0.0 or u > 1.0 or v < 0.0 or v > 1.0:
            return False
        H = (math.sqrt(rx * rx + ry * ry + rz * rz) - 1.0) * inv_ratio
        if H >= 1.0 and rx * dx + ry * dy + rz * dz >= 0.0:
            return False
        if H < bilinear_sample(values, u, v):
            return True
        dt = _compute_T(rx, ry, rz, dx, dy, dz, step_tex)
        if dt < 0.0:
            return False
        t += dt
    return False


@njit(cache=True)
def _distributed(px, py, pz, dirs, values, inv_ratio, step_tex, start_tex, max_steps):
    hits = 0
    for q in range(dirs.shape[0]):
        if _march_blocked(px, py, pz, dirs[q, 0], dirs[q, 1], dirs[q, 2], values, inv_ratio, step_tex, start_tex, max_steps):
            hits += 1
    return hits / dirs.shape[0]


def reference_step(n: int) -> float:
    return 0.5 / n


def distributed_reference(p, sampler: LightDiscSampler, hf: HeightField, start_offset: float = 2.0, max_steps: int = 100000) -> float:
    """Fraction of light-disc sample rays from ``p`` that hit the terrain."""
    if sampler.n < 1:
        raise ValueError("sampler needs n >= 1")
    p = np.asarray(p, dtype=np.float64)
    dirs = sampler.directions(frame_up=p)
    n = hf.N
    return float(
        _distributed(p[0], p[1], p[2], dirs, hf.values, 1.0 / hf.height_ratio, reference_step(n), start_offset / n, max_steps)
    )


@njit(cache=True)
def _uniform_cost(px, py, pz, lx, ly, lz, values, inv_ratio, slope_scale, steps, dt, start_tex):
    """Min over uniform texture-space steps of the cost slope; 1 if clear."""
    t = _compute_T(px, py, pz, lx, ly, lz, start_tex)
    if t < 0.0:
        return 1.0, 0
    on = math.sqrt(px * px + py * py + pz * pz)
    best = 1.0
    taken = 0
    for _ in range(steps):
        rx, ry, rz = px + lx * t, py + ly * t, pz + lz * t
        if rz <= 0.0:
            break
        u = 0.5 * rx / rz + 0.5
        v = 0.5 * ry / rz + 0.5
        if u < 0.0 or u > 1.0 or v < 0.0 or v > 1.0:
            break
        rn = math.sqrt(rx * rx + ry * ry + rz * rz)
        H = (rn - 1.0) * inv_ratio
        taken += 1
        delta = H - bilinear_sample(values, u, v)
        cosang = (px * rx + py * ry + pz * rz) / (on * rn)
        ang = math.acos(min(max(cosang, -1.0), 1.0))
        if ang > 0.0:
            J = delta * slope_scale / ang
            if J < best:
                best = J
        dtt = _compute_T(rx, ry, rz, lx, ly, lz, dt)
        if dtt < 0.0:
            break
        t += dtt
    return best, taken


def uniform_cost(p, L_hat, hf: HeightField, steps: int = 100, dt: float = 0.0006, start_offset: float = 2.0):
    """(min cost slope, samples taken) for fixed-size texture steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    L = np.asarray(L_hat, dtype=np.float64)
    L = L / np.linalg.norm(L)
    slope_scale = hf.horizontal_scale * hf.N / hf.body_radius
    J, taken = _uniform_cost(
        p[0], p[1], p[2], L[0], L[1], L[2], hf.values, 1.0 / hf.height_ratio, slope_scale, steps, dt, start_offset / hf.N
    )
    return float(J), int(taken)


def uniform_step_shadow(p, L_hat, hf: HeightField, steps: int = 100, dt: float = 0.0006, angular_radius: float = 0.01, N_hat=None, start_offset: float = 2.0) -> float:
    """Shadow fraction from uniform stepping mapped through the disc model."""
    J, _ = uniform_cost(p, L_hat, hf, steps, dt, start_offset)
    L = np.asarray(L_hat, dtype=np.float64)
    L = L / np.linalg.norm(L)
    c = 1.0 if N_hat is None else float(n_dot_nL(*np.asarray(N_hat, dtype=np.float64), *L))
    r_L = math.tan(angular_radius) * hf.horizontal_scale * hf.N / hf.vertical_scale
    return float(_occlusion(J, r_L, c)[0])
