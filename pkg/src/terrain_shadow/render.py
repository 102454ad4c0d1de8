"""Scene assembly, per-pixel shading, image output and image comparison.

Camera coordinates are in body radii in the body frame; the light direction
points from the surface toward the light.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from numba import njit, prange
from PIL import Image

from .heightfield import FACE_FRAMES, Body, HeightField, HeightFieldError, bilinear_sample, load_heightfield, tex_to_dir
from .maxmip import build_max_mipmap
from .oracles import LightDiscSampler, _march_blocked, _uniform_cost
from .shadow import FACE_EXIT, TraceConfig, _occlusion, _trace_shadow, light_slope_radius, n_dot_nL
from .viewray import MAX_SUBDIV, STEP_BUDGET, StepPolicy, _hit_uv, _surface_normal, _view_ray, build_cubesphere, displace_mesh

METHODS = ("dp", "uniform", "reference")
METHOD_CODE = {m: k for k, m in enumerate(METHODS)}
DEBUG_CHANNELS = ("J", "steps", "penumbra")

# numba probes an outdated TBB on some systems and falls back on its own
warnings.filterwarnings("ignore", message="The TBB threading layer")


class SceneError(ValueError):
    """Invalid or unloadable scene description or asset."""


# ------------------------------------------------------------------- scene


@dataclass(frozen=True)
class BodyConfig:
    radius_m: float = 1.0e5
    max_height_m: float = 5.0e3
    resolution: int = 512
    # synthetic generator settings, used for faces without a file
    terrain: dict = field(default_factory=lambda: {"type": "flat", "height": 0.0})
    # face id -> height-field path (PGM or raw with sidecar)
    faces: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LightConfig:
    direction: tuple = (0.0, 0.0, 1.0)
    angular_radius_rad: float = 0.0125


@dataclass(frozen=True)
class CameraConfig:
    position: tuple = (0.0, 0.0, 1.6)
    look_at: tuple = (0.0, 0.0, 1.0)
    up: tuple = (0.0, 1.0, 0.0)
    vfov_deg: float = 30.0
    width: int = 256
    height: int = 256


@dataclass(frozen=True)
class ViewConfig:
    predisplace: bool = True
    subdiv: int | None = None
    step_texels: float = 0.5
    tolerance_texels: float = 0.25
    budget: int = STEP_BUDGET


@dataclass(frozen=True)
class Scene:
    body: BodyConfig = field(default_factory=BodyConfig)
    light: LightConfig = field(default_factory=LightConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    method: str = "dp"
    trace: TraceConfig = field(default_factory=TraceConfig)
    reference_samples: int = 64
    uniform_steps: int = 100
    uniform_dt: float = 0.0006
    view: ViewConfig = field(default_factory=ViewConfig)
    seed: int = 0
    base_dir: str = "."

    def validate(self) -> "Scene":
        if self.method not in METHODS:
            raise SceneError(f"unknown method {self.method!r}")
        if not self.light.angular_radius_rad > 0.0:
            raise SceneError("light angular radius must be > 0")
        if not 0.0 < math.radians(self.camera.vfov_deg) < math.pi:
            raise SceneError("vertical FOV must be in (0, 180) degrees")
        if self.camera.width < 1 or self.camera.height < 1:
            raise SceneError("image dimensions must be positive")
        if np.linalg.norm(self.light.direction) == 0.0:
            raise SceneError("light direction is zero")
        if self.body.radius_m <= 0.0 or self.body.max_height_m <= 0.0:
            raise SceneError("body radius and max height must be positive")
        if self.reference_samples < 1 or self.uniform_steps < 1:
            raise SceneError("sample counts must be >= 1")
        try:
            self.trace.validate(self.body.resolution)
        except ValueError as exc:
            raise SceneError(str(exc)) from exc
        return self

    def replace(self, **kw) -> "Scene":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trace"] = {"schedule": list(self.trace.schedule), "start_offset": self.trace.start_offset}
        d["body"]["faces"] = {str(k): str(v) for k, v in self.body.faces.items()}
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "Scene":
        try:
            body = dict(d.get("body", {}))
            body["faces"] = {int(k): v for k, v in body.get("faces", {}).items()}
            light = dict(d.get("light", {}))
            light["direction"] = tuple(float(x) for x in light.get("direction", (0.0, 0.0, 1.0)))
            cam = dict(d.get("camera", {}))
            for k in ("position", "look_at", "up"):
                if k in cam:
                    cam[k] = tuple(float(x) for x in cam[k])
            tr = d.get("trace", {})
            trace = TraceConfig(
                schedule=tuple(int(x) for x in tr.get("schedule", (5, 5, 5))),
                start_offset=float(tr.get("start_offset", TraceConfig.start_offset)),
            )
            scene = cls(
                body=BodyConfig(**body),
                light=LightConfig(**light),
                camera=CameraConfig(**cam),
                method=d.get("method", "dp"),
                trace=trace,
                reference_samples=int(d.get("reference_samples", 64)),
                uniform_steps=int(d.get("uniform_steps", 100)),
                uniform_dt=float(d.get("uniform_dt", 0.0006)),
                view=ViewConfig(**d.get("view", {})),
                seed=int(d.get("seed", 0)),
                base_dir=str(base_dir),
            )
        except (TypeError, ValueError) as exc:
            raise SceneError(f"bad scene description: {exc}") from exc
        return scene.validate()


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc
    return Scene.from_dict(d, path.parent)


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2))


# -------------------------------------------------------- synthetic terrain


def face_directions(n: int) -> np.ndarray:
    """(6, n, n, 3) body-frame unit directions of texel centres."""
    g = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    x, y = np.meshgrid(g, g)
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return np.einsum("fab,jib->fjia", FACE_FRAMES, d)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def crater_terrain(dirs, craters=None, base=0.35, seed=0):
    """Parabolic bowls with raised rims; crater sizes are angular radii."""
    if craters is None:
        rng = np.random.default_rng(seed)
        craters = [{"center": [0.0, 0.0, 1.0], "radius": 0.08, "depth": 0.3, "rim": 0.25}]
        for _ in range(6):
            c = _unit([rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), 1.0])
            craters.append({"center": c.tolist(), "radius": rng.uniform(0.02, 0.05), "depth": 0.2, "rim": 0.15})
    h = np.full(dirs.shape[:-1], float(base))
    for c in craters:
        ang = np.arccos(np.clip(dirs @ _unit(c["center"]), -1.0, 1.0))
        r = ang / c["radius"]
        bowl = np.where(r < 1.0, -c["depth"] * (1.0 - r * r), 0.0)
        rim = c["rim"] * np.exp(-(((r - 1.0) / 0.25) ** 2))
        h = h + bowl + rim
    return np.clip(h, 0.0, 1.0)


def ridge_terrain(dirs, pole=(1.0, 0.3, 0.05), width=0.03, height=0.6, base=0.2, sharpness=0.004):
    """A flat-topped ridge with near-vertical walls along a great circle."""
    ang = np.arcsin(np.clip(dirs @ _unit(pole), -1.0, 1.0))
    wall = 0.5 * (np.tanh((width - np.abs(ang)) / sharpness) + 1.0)
    return np.clip(base + height * wall, 0.0, 1.0)


def fractal_terrain(dirs, octaves=7, roughness=0.55, base_freq=6.0, seed=0):
    """Sum of randomly oriented 3-D sinusoid octaves, rescaled to [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    h = np.zeros(dirs.shape[:-1])
    amp, freq = 1.0, base_freq
    for _ in range(octaves):
        for _ in range(4):
            w = _unit(rng.normal(size=3))
            h += amp * np.sin(freq * (dirs @ w) + rng.uniform(0, 2 * math.pi))
        amp *= roughness
        freq *= 2.0
    lo, hi = h.min(), h.max()
    return 0.05 + 0.9 * (h - lo) / (hi - lo)


def flat_terrain(dirs, height=0.0):
    return np.full(dirs.shape[:-1], float(height))


GENERATORS = {
    "flat": flat_terrain,
    "crater": crater_terrain,
    "ridge": ridge_terrain,
    "fractal": fractal_terrain,
}


def generate_faces(spec: dict, n: int) -> np.ndarray:
    spec = dict(spec)
    kind = spec.pop("type", "flat")
    if kind not in GENERATORS:
        raise SceneError(f"unknown terrain generator {kind!r}")
    return GENERATORS[kind](face_directions(n), **spec)


# ------------------------------------------------------------------ assets


@dataclass(frozen=True)
class SceneAssets:
    body: Body
    mesh: object
    packed: np.ndarray
    offsets: np.ndarray


def build_body(scene: Scene) -> Body:
    b = scene.body
    n = b.resolution
    hs = 2.0 * b.radius_m / n
    try:
        gen = generate_faces(b.terrain, n)
    except TypeError as exc:
        raise SceneError(f"bad terrain parameters: {exc}") from exc
    faces = {}
    for f in range(6):
        if f in b.faces:
            p = Path(b.faces[f])
            if not p.is_absolute():
                p = Path(scene.base_dir) / p
            try:
                hf = load_heightfield(p)
            except (OSError, HeightFieldError) as exc:
                raise SceneError(f"cannot load face {f} from {p}: {exc}") from exc
            if hf.N != n:
                raise SceneError(f"face {f} resolution {hf.N} != body resolution {n}")
            faces[f] = HeightField(hf.values, hs, b.max_height_m, f, b.radius_m)
        else:
            faces[f] = HeightField(gen[f], hs, b.max_height_m, f, b.radius_m)
    return Body(tuple(faces[f] for f in range(6)), b.radius_m, b.max_height_m)


def load_assets(scene: Scene, body: Body | None = None) -> SceneAssets:
    body = body or build_body(scene)
    n = body.N
    sub = min(MAX_SUBDIV, scene.view.subdiv or n)
    mesh = displace_mesh(build_cubesphere(sub, 1.0 + body.height_ratio), body)
    pyrs = [build_max_mipmap(f) for f in body.faces]
    packed = np.stack([p.packed for p in pyrs])
    return SceneAssets(body, mesh, packed, pyrs[0].offsets)


# ------------------------------------------------------------------ kernel


def camera_basis(cam: CameraConfig):
    pos = np.asarray(cam.position, dtype=np.float64)
    fwd = _unit(np.asarray(cam.look_at, dtype=np.float64) - pos)
    right = np.cross(fwd, np.asarray(cam.up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise SceneError("camera up is parallel to the view direction")
    right = _unit(right)
    up = np.cross(right, fwd)
    return pos, fwd, right, up


@njit(cache=True)
def _rotate_to_local(frames, f, x, y, z):
    M = frames[f]
    return (
        M[0, 0] * x + M[1, 0] * y + M[2, 0] * z,
        M[0, 1] * x + M[1, 1] * y + M[2, 1] * z,
        M[0, 2] * x + M[1, 2] * y + M[2, 2] * z,
    )


@njit(cache=True, parallel=True)
def _render(
    pos, fwd, right, up, tan_half, width, height,
    stack, frames, verts, ratio, base_step, tol, predisplace, budget,
    method, packed, offsets, schedule, start_offset, slope_scale, r_L,
    light, u_steps, u_dt, ref_dirs,
    irr, shade, cost, samples, steps, hit, status, interval,
):
    n0 = stack.shape[1]
    inv_ratio = 1.0 / ratio
    aspect = width / height
    lx, ly, lz = light[0], light[1], light[2]
    for y in prange(height):
        for x in range(width):
            sx = (2.0 * (x + 0.5) / width - 1.0) * tan_half * aspect
            sy = (1.0 - 2.0 * (y + 0.5) / height) * tan_half
            dx = fwd[0] + sx * right[0] + sy * up[0]
            dy = fwd[1] + sx * right[1] + sy * up[1]
            dz = fwd[2] + sx * right[2] + sy * up[2]
            dn = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx, dy, dz = dx / dn, dy / dn, dz / dn
            st, t, ns = _view_ray(stack, frames, verts, ratio, pos[0], pos[1], pos[2], dx, dy, dz, base_step, tol, predisplace, budget)
            steps[y, x] = ns
            if st == 0:
                continue
            hit[y, x] = 1
            f, u, v = _hit_uv(frames, pos[0] + dx * t, pos[1] + dy * t, pos[2] + dz * t)
            u = min(max(u, 0.0), 1.0)
            v = min(max(v, 0.0), 1.0)
            nx, ny, nz = _surface_normal(stack, frames, ratio, f, u, v)
            nl = nx * lx + ny * ly + nz * lz
            if nl <= 0.0:
                shade[y, x] = 1.0
                cost[y, x] = 0.0
                continue
            # shadow rays start on the surface, in face-local coordinates
            ex, ey, ez = tex_to_dir(u, v)
            rad = 1.0 + bilinear_sample(stack[f], u, v) * ratio
            px, py, pz = ex * rad, ey * rad, ez * rad
            qx, qy, qz = _rotate_to_local(frames, f, lx, ly, lz)
            c = n_dot_nL(nx, ny, nz, lx, ly, lz)
            if method == 0:
                J, _, _, _, k, iv, st = _trace_shadow(px, py, pz, qx, qy, qz, packed[f], offsets, n0, schedule, start_offset, inv_ratio, slope_scale)
                s = _occlusion(J, r_L, c)[0]
                status[y, x] = st
                interval[y, x] = iv
            elif method == 1:
                J, k = _uniform_cost(px, py, pz, qx, qy, qz, stack[f], inv_ratio, slope_scale, u_steps, u_dt, start_offset / n0)
                s = _occlusion(J, r_L, c)[0]
            else:
                blocked = 0
                for q in range(ref_dirs.shape[0]):
                    ax, ay, az = _rotate_to_local(frames, f, ref_dirs[q, 0], ref_dirs[q, 1], ref_dirs[q, 2])
                    if _march_blocked(px, py, pz, ax, ay, az, stack[f], inv_ratio, 0.5 / n0, start_offset / n0, 100000):
                        blocked += 1
                s = blocked / ref_dirs.shape[0]
                J = 1.0 - s
                k = ref_dirs.shape[0]
            shade[y, x] = s
            cost[y, x] = J
            samples[y, x] = k
            irr[y, x] = nl * (1.0 - s)


# ------------------------------------------------------------------ output


@dataclass
class ImageStats:
    width: int = 0
    height: int = 0
    method: str = ""
    wall_ms: float = 0.0
    hit_pixels: int = 0
    lit_pixels: int = 0
    mean_samples: float = 0.0
    p50_samples: float = 0.0
    p95_samples: float = 0.0
    max_samples: int = 0
    mean_steps: float = 0.0
    face_exit_pixels: int = 0
    sigma: float | None = None
    mean_error: float | None = None
    mean_abs_error: float | None = None
    within_3sigma: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class RenderResult:
    image: np.ndarray
    shadow: np.ndarray
    cost: np.ndarray
    samples: np.ndarray
    steps: np.ndarray
    hit: np.ndarray
    # DP trace status bits and index of the interval holding the minimum
    status: np.ndarray
    interval: np.ndarray
    stats: ImageStats


def set_threads(threads: int | None) -> None:
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def render_buffers(scene: Scene, assets: SceneAssets | None = None, threads: int | None = None) -> RenderResult:
    scene.validate()
    assets = assets or load_assets(scene)
    set_threads(threads)
    body = assets.body
    cam = scene.camera
    pos, fwd, right, up = camera_basis(cam)
    L = _unit(scene.light.direction)
    policy = StepPolicy(scene.view.step_texels, scene.view.tolerance_texels, scene.view.budget, scene.view.predisplace)
    n = body.N
    w, h = cam.width, cam.height
    irr = np.zeros((h, w))
    shade = np.zeros((h, w))
    cost = np.ones((h, w))
    samples = np.zeros((h, w), dtype=np.int64)
    steps = np.zeros((h, w), dtype=np.int64)
    hit = np.zeros((h, w), dtype=np.uint8)
    status = np.zeros((h, w), dtype=np.int64)
    interval = np.full((h, w), -1, dtype=np.int64)
    if scene.method == "reference":
        sampler = LightDiscSampler(tuple(L), scene.light.angular_radius_rad, scene.reference_samples, scene.seed)
        ref_dirs = sampler.directions()
    else:
        ref_dirs = np.zeros((1, 3))
    hs = body.horizontal_scale
    r_L = light_slope_radius(scene.light.angular_radius_rad, hs, n, body.max_height)
    t0 = time.perf_counter()
    _render(
        pos, fwd, right, up, math.tan(math.radians(cam.vfov_deg) / 2.0), w, h,
        body.stack, FACE_FRAMES, assets.mesh.vertices, body.height_ratio,
        policy.base_step(n), policy.tolerance(body), policy.predisplace, policy.budget,
        METHOD_CODE[scene.method], assets.packed, assets.offsets,
        np.asarray(scene.trace.schedule, dtype=np.int64), float(scene.trace.start_offset),
        hs * n / body.radius, r_L, L, scene.uniform_steps, scene.uniform_dt, ref_dirs,
        irr, shade, cost, samples, steps, hit, status, interval,
    )
    wall = (time.perf_counter() - t0) * 1e3
    lit = (hit == 1) & (samples > 0)
    sv = samples[lit]
    stats = ImageStats(
        width=w,
        height=h,
        method=scene.method,
        wall_ms=wall,
        hit_pixels=int(hit.sum()),
        lit_pixels=int(lit.sum()),
        mean_samples=float(sv.mean()) if sv.size else 0.0,
        p50_samples=float(np.percentile(sv, 50)) if sv.size else 0.0,
        p95_samples=float(np.percentile(sv, 95)) if sv.size else 0.0,
        max_samples=int(sv.max()) if sv.size else 0,
        mean_steps=float(steps[hit == 1].mean()) if hit.any() else 0.0,
        face_exit_pixels=int(np.count_nonzero(status & FACE_EXIT)),
    )
    return RenderResult(irr.astype(np.float32), shade, cost, samples, steps, hit, status, interval, stats)


def render_scene(scene: Scene, assets: SceneAssets | None = None, threads: int | None = None):
    """Render the scene; returns (float32 irradiance image, ImageStats)."""
    res = render_buffers(scene, assets, threads)
    return res.image, res.stats


def srgb_encode(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def write_png(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 2:
        q = np.rint(srgb_encode(img) * 255.0).astype(np.uint8)
        Image.fromarray(q, mode="L").save(path)
    else:
        Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def write_pfm(path, image: np.ndarray) -> None:
    """Greyscale little-endian PFM, rows stored bottom to top."""
    img = np.asarray(image, dtype="<f4")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    w, h = (int(x) for x in parts[1].split())
    scale = float(parts[2])
    chans = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=w * h * chans)
    shape = (h, w, 3) if chans == 3 else (h, w)
    return arr.reshape(shape)[::-1].astype(np.float32)


def compare_images(a: np.ndarray, b: np.ndarray, dark_offset: float = 0.0) -> ImageStats:
    """Signed error statistics of ``a - b`` after per-image max normalization.

    ``dark_offset`` is subtracted from both normalized images (floored at 0)
    before differencing.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")

    def norm(x):
        m = x.max()
        x = x / m if m > 0 else x.copy()
        if dark_offset:
            x = np.maximum(x - dark_offset, 0.0)
        return x

    err = norm(a) - norm(b)
    sigma = float(err.std())
    mean = float(err.mean())
    within = 1.0 if sigma == 0.0 else float(np.mean(np.abs(err - mean) <= 3.0 * sigma))
    h, w = a.shape[:2]
    return ImageStats(
        width=w,
        height=h,
        sigma=sigma,
        mean_error=mean,
        mean_abs_error=float(np.abs(err).mean()),
        within_3sigma=within,
    )


def _ramp(x):
    """Blue-to-yellow false colour for values in [0, 1]."""
    x = np.clip(x, 0.0, 1.0)[..., None]
    lo = np.array([20.0, 30.0, 140.0])
    mid = np.array([30.0, 170.0, 120.0])
    hi = np.array([250.0, 230.0, 40.0])
    return np.where(x < 0.5, lo + (mid - lo) * (2 * x), mid + (hi - mid) * (2 * x - 1))


def debug_image(res: RenderResult, channel: str) -> np.ndarray:
    """(h, w, 3) uint8 false-colour raster of a diagnostic channel."""
    if channel not in DEBUG_CHANNELS:
        raise ValueError(f"unknown debug channel {channel!r}")
    h, w = res.hit.shape
    out = np.zeros((h, w, 3))
    hit = res.hit == 1
    if channel == "J":
        out[hit] = _ramp(res.cost[hit])
    elif channel == "steps":
        s = res.steps.astype(np.float64)
        top = max(1.0, float(np.log1p(s).max()))
        out[:] = _ramp(np.log1p(s) / top)
    else:
        grey = np.rint(srgb_encode(res.image) * 255.0)
        out[hit] = grey[hit][:, None]
        out[hit & (res.shadow >= 1.0)] = (40, 60, 230)
        out[hit & (res.shadow > 0.0) & (res.shadow < 1.0)] = (220, 40, 40)
    return np.rint(out).astype(np.uint8)


def render_debug(scene: Scene, channel: str, assets: SceneAssets | None = None, threads: int | None = None) -> np.ndarray:
    return debug_image(render_buffers(scene, assets, threads), channel)
