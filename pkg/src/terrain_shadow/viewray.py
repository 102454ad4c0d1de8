"""View rays: cube-sphere bounding mesh, vertex pre-displacement, and short
bidirectional refinement against the bilinear height field.

All geometry is in body-frame units of the body radius. Per-face vertex grids
are stored in face-local coordinates so that the grid projects exactly onto
texture cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .heightfield import FACE_FRAMES, Body, bilinear_sample, face_of, tex_to_dir

MAX_SUBDIV = 4096
STEP_BUDGET = 1 << 14
MISS = 0
HIT = 1
BUDGET = 2


@dataclass(frozen=True)
class CubesphereMesh:
    """Per-face vertex grids ``vertices[f, j, i]`` in face-local coordinates."""

    vertices: np.ndarray
    subdiv: int
    radius: float

    @property
    def vertex_count(self) -> int:
        return 6 * (self.subdiv + 1) ** 2

    @property
    def triangle_count(self) -> int:
        return 12 * self.subdiv**2

    def texcoords(self) -> np.ndarray:
        g = np.arange(self.subdiv + 1) / self.subdiv
        uu, vv = np.meshgrid(g, g)
        return np.stack([uu, vv], axis=-1)

    def triangles(self, face: int) -> np.ndarray:
        """(2*s*s, 3) flat vertex indices into ``vertices[face].reshape(-1, 3)``."""
        s = self.subdiv
        j, i = np.mgrid[0:s, 0:s]
        a = j * (s + 1) + i
        b, c, d = a + 1, a + s + 2, a + s + 1
        t1 = np.stack([a, b, c], axis=-1).reshape(-1, 3)
        t2 = np.stack([a, c, d], axis=-1).reshape(-1, 3)
        return np.concatenate([t1, t2])

    def body_vertices(self) -> np.ndarray:
        """(6, s+1, s+1, 3) vertices rotated into the body frame."""
        return np.einsum("fab,fjib->fjia", FACE_FRAMES, self.vertices)

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.vertices, axis=-1)


def build_cubesphere(subdiv: int, radius: float = 1.0) -> CubesphereMesh:
    if subdiv < 1:
        raise ValueError("subdiv must be >= 1")
    if subdiv > MAX_SUBDIV:
        raise ValueError(f"subdiv {subdiv} exceeds {MAX_SUBDIV}")
    g = np.arange(subdiv + 1) / subdiv * 2.0 - 1.0
    x, y = np.meshgrid(g, g)
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    verts = np.broadcast_to(d * radius, (6,) + d.shape).copy()
    verts.setflags(write=False)
    return CubesphereMesh(verts, subdiv, float(radius))


def displace_mesh(mesh: CubesphereMesh, body: Body) -> CubesphereMesh:
    """Move each vertex radially onto the bilinear terrain surface."""
    uv = mesh.texcoords()
    out = np.empty_like(mesh.vertices)
    ratio = body.height_ratio
    for f in range(6):
        vals = body.faces[f].values
        h = _bilinear_grid(vals, uv[..., 0], uv[..., 1])
        dirs = mesh.vertices[f] / np.linalg.norm(mesh.vertices[f], axis=-1, keepdims=True)
        out[f] = dirs * (1.0 + h * ratio)[..., None]
    out.setflags(write=False)
    return CubesphereMesh(out, mesh.subdiv, mesh.radius)


def _bilinear_grid(values, u, v):
    n = values.shape[0]
    x = u * n - 0.5
    y = v * n - 0.5
    i0 = np.floor(x).astype(np.int64)
    j0 = np.floor(y).astype(np.int64)
    fx, fy = x - i0, y - j0
    i1 = np.clip(i0 + 1, 0, n - 1)
    j1 = np.clip(j0 + 1, 0, n - 1)
    i0 = np.clip(i0, 0, n - 1)
    j0 = np.clip(j0, 0, n - 1)
    a = values[j0, i0] * (1 - fx) + values[j0, i1] * fx
    b = values[j1, i0] * (1 - fx) + values[j1, i1] * fx
    return a * (1 - fy) + b * fy


# ------------------------------------------------------------------ kernels


@njit(cache=True)
def _sphere_span(ox, oy, oz, dx, dy, dz, rho):
    b = ox * dx + oy * dy + oz * dz
    c = ox * ox + oy * oy + oz * oz - rho * rho
    disc = b * b - c
    if disc < 0.0:
        return 1.0, -1.0
    s = math.sqrt(disc)
    return max(-b - s, 0.0), -b + s


@njit(cache=True)
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, v1, v2, tmin, tmax):
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-300:
        return -1.0
    inv = 1.0 / det
    sx, sy, sz = ox - v0[0], oy - v0[1], oz - v0[2]
    a = (sx * px + sy * py + sz * pz) * inv
    if a < -1e-9 or a > 1.0 + 1e-9:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    b = (dx * qx + dy * qy + dz * qz) * inv
    if b < -1e-9 or a + b > 1.0 + 1e-9:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < tmin or t > tmax:
        return -1.0
    return t


@njit(cache=True)
def _clip_pyramid(ox, oy, oz, dx, dy, dz, t0, t1):
    # z - x >= 0, z + x >= 0, z - y >= 0, z + y >= 0, z > 0
    for k in range(5):
        if k == 0:
            a, b = oz - ox, dz - dx
        elif k == 1:
            a, b = oz + ox, dz + dx
        elif k == 2:
            a, b = oz - oy, dz - dy
        elif k == 3:
            a, b = oz + oy, dz + dy
        else:
            a, b = oz - 1e-9, dz
        if b == 0.0:
            if a < 0.0:
                return 1.0, -1.0
            continue
        r = -a / b
        if b > 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    return t0, t1


@njit(cache=True)
def _mesh_face_hit(verts, f, ox, oy, oz, dx, dy, dz, tmin, tmax):
    """Nearest hit on one face grid; returns (t, nx, ny, nz) local, t<0 on miss."""
    s = verts.shape[1] - 1
    t0, t1 = _clip_pyramid(ox, oy, oz, dx, dy, dz, tmin, tmax)
    if t0 > t1:
        return -1.0, 0.0, 0.0, 0.0
    z0 = oz + dz * t0
    z1 = oz + dz * t1
    gx0 = (0.5 * (ox + dx * t0) / z0 + 0.5) * s
    gy0 = (0.5 * (oy + dy * t0) / z0 + 0.5) * s
    gx1 = (0.5 * (ox + dx * t1) / z1 + 0.5) * s
    gy1 = (0.5 * (oy + dy * t1) / z1 + 0.5) * s
    gx0 = min(max(gx0, 0.0), float(s))
    gy0 = min(max(gy0, 0.0), float(s))
    gx1 = min(max(gx1, 0.0), float(s))
    gy1 = min(max(gy1, 0.0), float(s))
    ix = min(int(math.floor(gx0)), s - 1)
    iy = min(int(math.floor(gy0)), s - 1)
    ex = min(int(math.floor(gx1)), s - 1)
    ey = min(int(math.floor(gy1)), s - 1)
    ddx = gx1 - gx0
    ddy = gy1 - gy0
    sx = 1 if ddx > 0 else -1
    sy = 1 if ddy > 0 else -1
    inf = 1e300
    if ddx != 0.0:
        nxt = ix + 1 if sx > 0 else ix
        tmx = (nxt - gx0) / ddx
        tdx = abs(1.0 / ddx)
    else:
        tmx = inf
        tdx = inf
    if ddy != 0.0:
        nyt = iy + 1 if sy > 0 else iy
        tmy = (nyt - gy0) / ddy
        tdy = abs(1.0 / ddy)
    else:
        tmy = inf
        tdy = inf
    lo = t0 - 1e-9
    hi = t1 + 1e-9
    for _ in range(4 * s + 8):
        best = -1.0
        v00 = verts[f, iy, ix]
        v10 = verts[f, iy, ix + 1]
        v11 = verts[f, iy + 1, ix + 1]
        v01 = verts[f, iy + 1, ix]
        ta = _tri_hit(ox, oy, oz, dx, dy, dz, v00, v10, v11, lo, hi)
        tb = _tri_hit(ox, oy, oz, dx, dy, dz, v00, v11, v01, lo, hi)
        which = 0
        if ta >= 0.0:
            best = ta
            which = 1
        if tb >= 0.0 and (best < 0.0 or tb < best):
            best = tb
            which = 2
        if best >= 0.0:
            if which == 1:
                a, b, c = v00, v10, v11
            else:
                a, b, c = v00, v11, v01
            e1 = b - a
            e2 = c - a
            nx = e1[1] * e2[2] - e1[2] * e2[1]
            ny = e1[2] * e2[0] - e1[0] * e2[2]
            nz = e1[0] * e2[1] - e1[1] * e2[0]
            nn = math.sqrt(nx * nx + ny * ny + nz * nz)
            return best, nx / nn, ny / nn, nz / nn
        if ix == ex and iy == ey:
            break
        if tmx < tmy:
            if tmx > 1.0:
                break
            ix += sx
            tmx += tdx
        else:
            if tmy > 1.0:
                break
            iy += sy
            tmy += tdy
        if ix < 0 or ix >= s or iy < 0 or iy >= s:
            break
    return -1.0, 0.0, 0.0, 0.0


@njit(cache=True)
def _mesh_hit(verts, frames, ox, oy, oz, dx, dy, dz, tmin, tmax):
    """Nearest displaced-mesh hit over all faces; normal returned in body frame."""
    best = -1.0
    bnx, bny, bnz = 0.0, 0.0, 0.0
    for f in range(6):
        M = frames[f]
        # body -> face-local is M^T
        lox = M[0, 0] * ox + M[1, 0] * oy + M[2, 0] * oz
        loy = M[0, 1] * ox + M[1, 1] * oy + M[2, 1] * oz
        loz = M[0, 2] * ox + M[1, 2] * oy + M[2, 2] * oz
        ldx = M[0, 0] * dx + M[1, 0] * dy + M[2, 0] * dz
        ldy = M[0, 1] * dx + M[1, 1] * dy + M[2, 1] * dz
        ldz = M[0, 2] * dx + M[1, 2] * dy + M[2, 2] * dz
        hi = tmax if best < 0.0 else min(tmax, best)
        t, nx, ny, nz = _mesh_face_hit(verts, f, lox, loy, loz, ldx, ldy, ldz, tmin, hi)
        if t >= 0.0 and (best < 0.0 or t < best):
            best = t
            bnx = M[0, 0] * nx + M[0, 1] * ny + M[0, 2] * nz
            bny = M[1, 0] * nx + M[1, 1] * ny + M[1, 2] * nz
            bnz = M[2, 0] * nx + M[2, 1] * ny + M[2, 2] * nz
    return best, bnx, bny, bnz


@njit(cache=True)
def _local(frames, f, x, y, z):
    M = frames[f]
    return (
        M[0, 0] * x + M[1, 0] * y + M[2, 0] * z,
        M[0, 1] * x + M[1, 1] * y + M[2, 1] * z,
        M[0, 2] * x + M[1, 2] * y + M[2, 2] * z,
    )


@njit(cache=True)
def _gap(stack, frames, ratio, x, y, z):
    """Ray height minus terrain height (h units) at a body-frame point."""
    f = face_of(x, y, z)
    lx, ly, lz = _local(frames, f, x, y, z)
    u = 0.5 * lx / lz + 0.5
    v = 0.5 * ly / lz + 0.5
    r = math.sqrt(x * x + y * y + z * z)
    return (r - 1.0) / ratio - bilinear_sample(stack[f], u, v)


@njit(cache=True)
def _refine(stack, frames, ratio, ox, oy, oz, dx, dy, dz, t, tmin, tmax, step, tol, budget):
    """Bidirectional march from ``t`` to the surface; returns (status, t, steps)."""
    g = _gap(stack, frames, ratio, ox + dx * t, oy + dy * t, oz + dz * t)
    steps = 1
    if abs(g) < tol:
        return HIT, t, steps
    sgn = 1.0 if g > 0.0 else -1.0
    while steps < budget:
        tn = t + sgn * step
        edge = False
        if tn >= tmax:
            tn = tmax
            edge = True
        elif tn <= tmin:
            tn = tmin
            edge = True
        gn = _gap(stack, frames, ratio, ox + dx * tn, oy + dy * tn, oz + dz * tn)
        steps += 1
        if abs(gn) < tol:
            return HIT, tn, steps
        if (gn > 0.0) != (g > 0.0):
            a, b, ga = t, tn, g
            for _ in range(60):
                if steps >= budget:
                    break
                mid = 0.5 * (a + b)
                gm = _gap(stack, frames, ratio, ox + dx * mid, oy + dy * mid, oz + dz * mid)
                steps += 1
                if abs(gm) < tol:
                    return HIT, mid, steps
                if (gm > 0.0) == (ga > 0.0):
                    a, ga = mid, gm
                else:
                    b = mid
            return HIT, 0.5 * (a + b), steps
        if edge:
            if sgn > 0.0:
                return MISS, tn, steps
            # surface rises above the shell entry: take the entry point
            return HIT, tn, steps
        t, g = tn, gn
    return BUDGET, t, steps


@njit(cache=True)
def _oblique(ndv):
    a = abs(ndv)
    if a <= 0.125:
        return 8.0
    return min(max(1.0 / a, 1.0), 8.0)


@njit(cache=True)
def _view_ray(stack, frames, verts, ratio, ox, oy, oz, dx, dy, dz, base_step, tol, predisplace, budget):
    """Returns (status, t, steps)."""
    rho = 1.0 + ratio
    tin, tout = _sphere_span(ox, oy, oz, dx, dy, dz, rho)
    if tin > tout:
        return MISS, -1.0, 0
    if predisplace:
        t, nx, ny, nz = _mesh_hit(verts, frames, ox, oy, oz, dx, dy, dz, tin, tout)
        if t >= 0.0:
            step = base_step * _oblique(nx * dx + ny * dy + nz * dz)
            return _refine(stack, frames, ratio, ox, oy, oz, dx, dy, dz, t, tin, tout, step, tol, budget)
    # march from the bounding-sphere entry
    px, py, pz = ox + dx * tin, oy + dy * tin, oz + dz * tin
    r = math.sqrt(px * px + py * py + pz * pz)
    step = base_step * _oblique((px * dx + py * dy + pz * dz) / r)
    return _refine(stack, frames, ratio, ox, oy, oz, dx, dy, dz, tin, tin, tout, step, tol, budget)


@njit(cache=True)
def _surface_local(values, u, v, ratio):
    x, y, z = tex_to_dir(u, v)
    s = 1.0 + bilinear_sample(values, u, v) * ratio
    return x * s, y * s, z * s


@njit(cache=True)
def _surface_normal(stack, frames, ratio, f, u, v):
    """Outward unit normal (body frame) from central differences."""
    vals = stack[f]
    e = 1.0 / vals.shape[0]
    ax, ay, az = _surface_local(vals, u + e, v, ratio)
    bx, by, bz = _surface_local(vals, u - e, v, ratio)
    cx, cy, cz = _surface_local(vals, u, v + e, ratio)
    dx, dy, dz = _surface_local(vals, u, v - e, ratio)
    ux, uy, uz = ax - bx, ay - by, az - bz
    vx, vy, vz = cx - dx, cy - dy, cz - dz
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    nx, ny, nz = nx / nn, ny / nn, nz / nn
    px, py, pz = tex_to_dir(u, v)
    if nx * px + ny * py + nz * pz < 0.0:
        nx, ny, nz = -nx, -ny, -nz
    M = frames[f]
    return (
        M[0, 0] * nx + M[0, 1] * ny + M[0, 2] * nz,
        M[1, 0] * nx + M[1, 1] * ny + M[1, 2] * nz,
        M[2, 0] * nx + M[2, 1] * ny + M[2, 2] * nz,
    )


@njit(cache=True)
def _hit_uv(frames, x, y, z):
    f = face_of(x, y, z)
    lx, ly, lz = _local(frames, f, x, y, z)
    return f, 0.5 * lx / lz + 0.5, 0.5 * ly / lz + 0.5


# --------------------------------------------------------------- public API


@dataclass(frozen=True)
class StepPolicy:
    """Refinement settings; lengths are in base texels."""

    step_texels: float = 0.5
    tolerance_texels: float = 0.25
    budget: int = STEP_BUDGET
    predisplace: bool = True

    def base_step(self, N: int) -> float:
        # a base texel spans about 2/N body radii at the face centre
        return self.step_texels * 2.0 / N

    def tolerance(self, body: Body) -> float:
        """Tolerance in normalized height units."""
        return self.tolerance_texels * body.horizontal_scale / body.max_height


@dataclass(frozen=True)
class SurfaceHit:
    p: np.ndarray
    N_hat: np.ndarray
    uv: tuple
    steps: int
    face_id: int
    t: float


def view_intersect(origin, direction, mesh: CubesphereMesh | None, body: Body, policy: StepPolicy | None = None):
    """Cast one view ray; returns a SurfaceHit or None on a miss.

    ``mesh`` must be displaced with ``body``; pass ``None`` (or a policy with
    ``predisplace=False``) to march from the bounding sphere instead.
    """
    policy = policy or StepPolicy()
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    pre = policy.predisplace and mesh is not None
    verts = mesh.vertices if pre else np.zeros((6, 2, 2, 3))
    st, t, steps = _view_ray(
        body.stack, FACE_FRAMES, verts, body.height_ratio, *o, *d,
        policy.base_step(body.N), policy.tolerance(body), pre, policy.budget,
    )
    if st == MISS:
        return None
    p = o + t * d
    f, u, v = _hit_uv(FACE_FRAMES, *p)
    n = np.array(_surface_normal(body.stack, FACE_FRAMES, body.height_ratio, f, u, v))
    return SurfaceHit(p, n, (float(u), float(v)), int(steps), int(f), float(t))


def view_steps(origin, direction, mesh, body: Body, policy: StepPolicy | None = None) -> int:
    """Refinement step count for one ray (0 on an early sphere miss)."""
    policy = policy or StepPolicy()
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    pre = policy.predisplace and mesh is not None
    verts = mesh.vertices if pre else np.zeros((6, 2, 2, 3))
    return int(
        _view_ray(
            body.stack, FACE_FRAMES, verts, body.height_ratio, *o, *d,
            policy.base_step(body.N), policy.tolerance(body), pre, policy.budget,
        )[2]
    )
