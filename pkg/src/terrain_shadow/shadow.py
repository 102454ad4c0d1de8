"""Soft shadows by dynamic programming over a maximum mipmap.

A shadow ray from a surface point toward the light centre is split into
intervals, each one level-``m0`` texel long in texture space. Within an
interval the trace descends the pyramid from ``m0`` to level 0, keeping at
each level the texel with the smallest ``H - max h`` among the (at most three)
texels under the current window, and narrowing the window to the part of the
ray inside that texel. The minimizing height gap and its ray distance give
the cost ``J*`` which is mapped to an occluded disc fraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .heightfield import ProjectionError
from .maxmip import MaxMipPyramid, fetch_max

DEGENERATE_EPS = 1e-18

# trace status bits
ESCAPED = 1
FACE_EXIT = 2
NO_FOOTPRINT = 4


class NoFootprintError(ValueError):
    """Shadow ray has no horizontal motion in texture space."""


@dataclass(frozen=True)
class TraceConfig:
    schedule: tuple = (5, 5, 5)
    # base texels skipped at the ray origin to avoid self-shadowing
    start_offset: float = 2.0

    def __post_init__(self):
        sched = tuple(int(n) for n in self.schedule)
        if not sched or any(n < 1 for n in sched):
            raise ValueError(f"invalid N' schedule {self.schedule}")
        object.__setattr__(self, "schedule", sched)

    @property
    def max_samples(self) -> int:
        return 3 * sum(self.schedule)

    def validate(self, n: int) -> None:
        log_n = int(math.log2(n))
        if any(k > log_n for k in self.schedule):
            raise ValueError(f"N' {max(self.schedule)} exceeds log2 N = {log_n}")


@dataclass
class ShadowRay:
    p: np.ndarray
    L_hat: np.ndarray
    T: float | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        L = np.asarray(self.L_hat, dtype=np.float64)
        self.L_hat = L / np.linalg.norm(L)


@dataclass
class ShadowTraceState:
    k: int = 0
    m: int = 0
    t: float = 1.0
    H: float = 0.0
    delta_maxh_star: float = 1.0
    t_star: float = -1.0
    J_star: float = 1.0
    distance: float = 0.0
    samples: int = 0
    status: int = 0
    interval: int = -1
    visited: list = field(default_factory=list)


@dataclass(frozen=True)
class ShadowResult:
    J_star: float
    t_star: float
    distance: float
    delta: float
    samples: int
    interval: int
    status: int


# --------------------------------------------------------------- geometry


@njit(cache=True)
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _compute_T(px, py, pz, lx, ly, lz, delta_m):
    """Ray length whose tip projects ``delta_m`` texture units downrange.

    Returns -1 when the ray has no horizontal footprint.
    """
    # tangent of the projected ray at p, in plane coordinates
    dx = lx * pz - px * lz
    dy = ly * pz - py * lz
    dn = math.sqrt(dx * dx + dy * dy)
    if dn == 0.0 or pz <= 0.0:
        return -1.0
    # plane coords are twice texture coords
    bx = px / pz + 2.0 * delta_m * dx / dn
    by = py / pz + 2.0 * delta_m * dy / dn
    bz = 1.0
    ax0, ax1, ax2 = _cross(lx, ly, lz, bx, by, bz)
    den = ax0 * ax0 + ax1 * ax1 + ax2 * ax2
    if den < DEGENERATE_EPS:
        return -1.0
    cx0, cx1, cx2 = _cross(-px, -py, -pz, bx, by, bz)
    T = (cx0 * ax0 + cx1 * ax1 + cx2 * ax2) / den
    if not T > 0.0:
        return -1.0
    return T


def compute_T(p, L_hat, delta_M: float) -> float:
    """Length along ``L_hat`` from ``p`` covering one texel of size ``delta_M``."""
    px, py, pz = (float(c) for c in p)
    lx, ly, lz = (float(c) for c in L_hat)
    if pz <= 0.0:
        raise ProjectionError("behind face plane")
    T = _compute_T(px, py, pz, lx, ly, lz, float(delta_M))
    if T < 0.0:
        raise NoFootprintError("no horizontal footprint")
    return T


@njit(cache=True)
def _segment_cells(ax, ay, bx, by, sa, sb, cell, out_i, out_j, out_a, out_b):
    """Grid cells crossed by the line A+s(B-A), s in [sa, sb].

    Cells are written in order of increasing s; returns the count.
    """
    dx = bx - ax
    dy = by - ay
    brk = np.empty(8)
    nb = 0
    brk[nb] = sa
    nb += 1
    for comp in range(2):
        a0 = ax if comp == 0 else ay
        d = dx if comp == 0 else dy
        if d == 0.0:
            continue
        x0 = a0 + sa * d
        x1 = a0 + sb * d
        lo = min(x0, x1)
        hi = max(x0, x1)
        g = math.floor(lo / cell) + 1.0
        while g * cell < hi and nb < 7:
            s = (g * cell - a0) / d
            if s > sa and s < sb:
                brk[nb] = s
                nb += 1
            g += 1.0
    brk[nb] = sb
    nb += 1
    b = np.sort(brk[:nb])
    cnt = 0
    for q in range(nb - 1):
        s0 = b[q]
        s1 = b[q + 1]
        sm = 0.5 * (s0 + s1)
        i = int(math.floor((ax + sm * dx) / cell))
        j = int(math.floor((ay + sm * dy) / cell))
        if cnt > 0 and out_i[cnt - 1] == i and out_j[cnt - 1] == j:
            out_b[cnt - 1] = s1
            continue
        if cnt >= out_i.shape[0]:
            break
        out_i[cnt] = i
        out_j[cnt] = j
        out_a[cnt] = s0
        out_b[cnt] = s1
        cnt += 1
    return cnt


def dda_candidates(t_tex, dir_tex, m: int, N: int) -> list[tuple[int, int]]:
    """Level-``m`` texels (column, row) under a half-texel segment from ``t_tex``.

    Unlike a canonical DDA step sequence, every texel the segment footprint
    overlaps is returned (one to three of them).
    """
    u, v = (float(c) for c in t_tex)
    d = np.asarray(dir_tex, dtype=np.float64)
    cell = 2.0**m / N
    n = float(np.hypot(d[0], d[1]))
    if n == 0.0:
        return [(int(math.floor(u / cell)), int(math.floor(v / cell)))]
    length = 0.5 * cell
    bx, by = u + d[0] / n * length, v + d[1] / n * length
    oi = np.zeros(4, np.int64)
    oj = np.zeros(4, np.int64)
    oa = np.zeros(4)
    ob = np.zeros(4)
    cnt = _segment_cells(u, v, bx, by, 0.0, 1.0, cell, oi, oj, oa, ob)
    out = [(int(oi[c]), int(oj[c])) for c in range(cnt)]
    # texels are closed at the far end: one the tip merely touches counts too
    tip = (int(math.floor((bx + d[0] / n * 1e-9 * cell) / cell)), int(math.floor((by + d[1] / n * 1e-9 * cell) / cell)))
    if tip not in out and len(out) < 3:
        out.append(tip)
    return out


# ------------------------------------------------------------------ trace


@njit(cache=True)
def _ray_point_at(qx, qy, px, py, pz, lx, ly, lz):
    """Distance along the ray whose projection hits plane point (qx, qy)."""
    # solve on the better-conditioned component
    dxn = lx - qx * lz
    dyn = ly - qy * lz
    if abs(dxn) >= abs(dyn):
        return (qx * pz - px) / dxn
    return (qy * pz - py) / dyn


@njit(cache=True)
def _trace_interval(
    rx, ry, rz, lx, ly, lz, ox, oy, oz, packed, offsets, n0, n_prime, inv_ratio, slope_scale, visited
):
    """One interval of the DP trace starting at R=(rx,ry,rz).

    Returns (delta*, t*, distance from origin o, J*, samples, status, T, s_end).
    ``visited`` (shape (3*n_prime, 4): m, i, j, cost) records every fetch.
    """
    m0 = n_prime - 1
    dm = (2.0**m0) / n0
    T = _compute_T(rx, ry, rz, lx, ly, lz, dm)
    if T < 0.0:
        return 1.0, -1.0, 0.0, 1.0, 0, NO_FOOTPRINT, 0.0, 0.0
    ex, ey, ez = rx + lx * T, ry + ly * T, rz + lz * T
    ax, ay = 0.5 * rx / rz + 0.5, 0.5 * ry / rz + 0.5
    bx, by = 0.5 * ex / ez + 0.5, 0.5 * ey / ez + 0.5
    dx, dy = bx - ax, by - ay
    status = 0
    # clip to the face
    s_end = 1.0
    if dx > 0.0:
        s_end = min(s_end, (1.0 - ax) / dx)
    elif dx < 0.0:
        s_end = min(s_end, -ax / dx)
    if dy > 0.0:
        s_end = min(s_end, (1.0 - ay) / dy)
    elif dy < 0.0:
        s_end = min(s_end, -ay / dy)
    if s_end < 1.0:
        status |= FACE_EXIT
    if s_end <= 0.0:
        return 1.0, -1.0, 0.0, 1.0, 0, status, T, 0.0
    seg2 = dx * dx + dy * dy

    oi = np.zeros(4, np.int64)
    oj = np.zeros(4, np.int64)
    oa = np.zeros(4)
    ob = np.zeros(4)

    sa = 0.0
    sb = s_end
    pi_ = -1
    pj = -1
    best = 1.0
    best_s = -1.0
    samples = 0
    for k in range(n_prime):
        m = m0 - k
        cell = (2.0**m) / n0
        cnt = _segment_cells(ax, ay, bx, by, sa, sb, cell, oi, oj, oa, ob)
        if cnt == 0:
            break
        if k > 0:
            for c in range(cnt):
                oi[c] = min(max(oi[c], 2 * pi_), 2 * pi_ + 1)
                oj[c] = min(max(oj[c], 2 * pj), 2 * pj + 1)
        best = 1.0
        best_s = -1.0
        best_c = -1
        # three fetches per level, far end of the window first
        for slot in range(3):
            c = max(cnt - 1 - slot, 0)
            mh = fetch_max(packed, offsets, n0, m, oi[c], oj[c])
            samples += 1
            cu = (oi[c] + 0.5) * cell
            cv = (oj[c] + 0.5) * cell
            sc = ((cu - ax) * dx + (cv - ay) * dy) / seg2
            # ray point above the texel centre, kept inside the texel's crossing
            sc = min(max(sc, oa[c]), ob[c])
            qx = 2.0 * (ax + sc * dx) - 1.0
            qy = 2.0 * (ay + sc * dy) - 1.0
            t = _ray_point_at(qx, qy, rx, ry, rz, lx, ly, lz)
            hx, hy, hz = rx + lx * t, ry + ly * t, rz + lz * t
            H = (math.sqrt(hx * hx + hy * hy + hz * hz) - 1.0) * inv_ratio
            cost = H - mh
            visited[samples - 1, 0] = m
            visited[samples - 1, 1] = oi[c]
            visited[samples - 1, 2] = oj[c]
            visited[samples - 1, 3] = cost
            if cost < best:
                best = cost
                best_s = sc
                best_c = c
        if best_c < 0:
            # nothing below the ray: keep descending at the far end
            best_c = cnt - 1
        sa = oa[best_c]
        sb = ob[best_c]
        pi_ = oi[best_c]
        pj = oj[best_c]

    if best_s < 0.0 or best >= 1.0:
        return 1.0, -1.0, 0.0, 1.0, samples, status, T, s_end
    qx = 2.0 * (ax + best_s * dx) - 1.0
    qy = 2.0 * (ay + best_s * dy) - 1.0
    t = _ray_point_at(qx, qy, rx, ry, rz, lx, ly, lz)
    hx, hy, hz = rx + lx * t, ry + ly * t, rz + lz * t
    dist = math.sqrt((hx - ox) ** 2 + (hy - oy) ** 2 + (hz - oz) ** 2)
    on = math.sqrt(ox * ox + oy * oy + oz * oz)
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    cosang = (ox * hx + oy * hy + oz * hz) / (on * hn)
    ang = math.acos(min(max(cosang, -1.0), 1.0))
    # sub-ulp angles fall back to the chord
    if ang < 1e-12:
        ang = max(dist, 1e-300)
    J = best * slope_scale / ang
    return best, t / T, dist, J, samples, status, T, s_end


@njit(cache=True)
def _trace_shadow(px, py, pz, lx, ly, lz, packed, offsets, n0, schedule, start_offset, inv_ratio, slope_scale):
    """All intervals; returns (J*, t*, distance, delta*, samples, interval, status)."""
    status = 0
    rx, ry, rz = px, py, pz
    if start_offset > 0.0:
        t1 = _compute_T(px, py, pz, lx, ly, lz, start_offset / n0)
        if t1 < 0.0:
            return 1.0, -1.0, 0.0, 1.0, 0, -1, NO_FOOTPRINT
        rx, ry, rz = px + lx * t1, py + ly * t1, pz + lz * t1
    maxn = 1
    for q in range(schedule.shape[0]):
        maxn = max(maxn, schedule[q])
    visited = np.zeros((3 * maxn, 4))
    bestJ = 1.0
    best_t = -1.0
    best_d = 0.0
    best_delta = 1.0
    best_iv = -1
    samples = 0
    for iv in range(schedule.shape[0]):
        r = math.sqrt(rx * rx + ry * ry + rz * rz)
        H0 = (r - 1.0) * inv_ratio
        # above all terrain and rising; flagged but traced on so every ray
        # costs the same number of samples
        if H0 >= 1.0 and rx * lx + ry * ly + rz * lz >= 0.0:
            status |= ESCAPED
        delta, t, dist, J, ns, st, T, s_end = _trace_interval(
            rx, ry, rz, lx, ly, lz, px, py, pz, packed, offsets, n0, schedule[iv], inv_ratio, slope_scale, visited
        )
        samples += ns
        status |= st
        if t >= 0.0 and J < bestJ:
            bestJ = J
            best_t = iv + t
            best_d = dist
            best_delta = delta
            best_iv = iv
        if st & (FACE_EXIT | NO_FOOTPRINT):
            break
        rx, ry, rz = rx + lx * T, ry + ly * T, rz + lz * T
    return bestJ, best_t, best_d, best_delta, samples, best_iv, status


def _scales(pyr: MaxMipPyramid):
    return pyr.scales


def trace_shadow_interval(
    ray: ShadowRay, pyr: MaxMipPyramid, cfg: TraceConfig, state: ShadowTraceState | None = None, n_prime: int | None = None, origin=None
) -> ShadowTraceState:
    """Run the descent for one interval starting at ``ray.p``.

    ``origin`` is the shading point used for the cost denominator (defaults to
    ``ray.p``).
    """
    if state is None:
        state = ShadowTraceState()
    n_prime = cfg.schedule[0] if n_prime is None else n_prime
    cfg.validate(pyr.N)
    inv_ratio, slope_scale = _scales(pyr)
    o = ray.p if origin is None else np.asarray(origin, dtype=np.float64)
    visited = np.zeros((3 * n_prime, 4))
    p, L = ray.p, ray.L_hat
    if p[2] <= 0.0:
        raise ProjectionError("behind face plane")
    delta, t, dist, J, ns, st, T, _ = _trace_interval(
        p[0], p[1], p[2], L[0], L[1], L[2], o[0], o[1], o[2], pyr.packed, pyr.offsets, pyr.N, n_prime, inv_ratio, slope_scale, visited
    )
    if st & NO_FOOTPRINT:
        raise NoFootprintError("no horizontal footprint")
    ray.T = T
    return replace(
        state,
        k=n_prime,
        m=-1,
        t=t,
        delta_maxh_star=delta,
        t_star=t,
        J_star=J,
        distance=dist,
        samples=state.samples + ns,
        status=state.status | st,
        visited=[tuple(row) for row in visited[:ns]],
    )


def trace_shadow(ray: ShadowRay, pyr: MaxMipPyramid, cfg: TraceConfig | None = None) -> ShadowResult:
    """Concatenated intervals per ``cfg.schedule``; the minimum ``J*`` wins."""
    cfg = cfg or TraceConfig()
    cfg.validate(pyr.N)
    inv_ratio, slope_scale = _scales(pyr)
    p, L = ray.p, ray.L_hat
    if p[2] <= 0.0:
        raise ProjectionError("behind face plane")
    J, t, d, delta, ns, iv, st = _trace_shadow(
        p[0], p[1], p[2], L[0], L[1], L[2], pyr.packed, pyr.offsets, pyr.N,
        np.asarray(cfg.schedule, dtype=np.int64), float(cfg.start_offset), inv_ratio, slope_scale,
    )
    return ShadowResult(J, t, d, delta, ns, iv, st)


# -------------------------------------------------------------- occlusion


@dataclass(frozen=True)
class OcclusionInput:
    J_star: float
    r_L: float
    n_dot_nL: float = 1.0


@njit(cache=True)
def _occlusion(J, r_L, c):
    """Returns (s, segment term, linear term, d)."""
    if J >= 1.0:
        return 0.0, 0.0, 0.0, -1.0
    if J <= 0.0:
        return 1.0, 1.0, 1.0 - J, 1.0
    # larger clearance slides the disc out of shadow
    d = 2.0 * (r_L - J * c) / r_L
    d = min(max(d, -1.0), 1.0)
    seg = (math.pi - math.acos(d) + d * math.sqrt(1.0 - d * d)) / math.pi
    seg = min(max(seg, 0.0), 1.0)
    lin = 1.0 - J
    return max(seg, lin), seg, lin, d


def occlusion_branches(inp: OcclusionInput) -> dict:
    if not inp.r_L > 0.0:
        raise ValueError("r_L must be positive")
    s, seg, lin, d = _occlusion(float(inp.J_star), float(inp.r_L), float(inp.n_dot_nL))
    return {"s": s, "segment": seg, "linear": lin, "d": d}


def occlusion_fraction(inp: OcclusionInput) -> float:
    """Occluded fraction of the light disc for cost ``J*``."""
    return occlusion_branches(inp)["s"]


def segment_fraction(d: float) -> float:
    """Circular-segment area fraction for normalized chord offset ``d``."""
    d = min(max(float(d), -1.0), 1.0)
    return (math.pi - math.acos(d) + d * math.sqrt(1.0 - d * d)) / math.pi


def light_slope_radius(angular_radius: float, horizontal_scale: float, N: int, vertical_scale: float) -> float:
    """Light radius in the same height-per-texture-width slope units as ``J*``."""
    return math.tan(angular_radius) * horizontal_scale * N / vertical_scale


@njit(cache=True)
def n_dot_nL(nx, ny, nz, lx, ly, lz):
    nl = nx * lx + ny * ly + nz * lz
    return math.sqrt(max(0.0, 1.0 - nl * nl))


def shadow_term(p, N_hat, L_hat, pyr: MaxMipPyramid, cfg: TraceConfig, angular_radius: float) -> float:
    """Shadow fraction at surface point ``p`` (face-local) for a disc light."""
    N_hat = np.asarray(N_hat, dtype=np.float64)
    ray = ShadowRay(p, L_hat)
    L = ray.L_hat
    if float(N_hat @ L) <= 0.0:
        return 1.0
    res = trace_shadow(ray, pyr, cfg)
    r_L = pyr.light_radius(angular_radius)
    c = float(n_dot_nL(*N_hat, *L))
    return float(_occlusion(res.J_star, r_L, c)[0])
