"""Height-field storage, file I/O, tile stitching and cube-face projections.

Object space is face-local: each cube face has a right-handed frame with the
face plane at ``z = 1`` and lengths in units of the body radius. A texel row
index follows ``v`` and a column index follows ``u``; ``values[j, i]`` covers
``u in [i/N, (i+1)/N)``, ``v in [j/N, (j+1)/N)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit


class HeightFieldError(ValueError):
    """Malformed, non-square, non-power-of-two or out-of-range height data."""


class ProjectionError(ValueError):
    """Point cannot be projected onto the face plane."""


# Columns are (e_u, e_v, n) of each face in the body frame.
FACE_FRAMES = np.array(
    [
        [[1, 0, 0], [0, 1, 0], [0, 0, 1]],  # +Z
        [[1, 0, 0], [0, -1, 0], [0, 0, -1]],  # -Z
        [[0, 1, 0], [0, 0, 1], [1, 0, 0]],  # +X
        [[0, 0, 1], [0, 1, 0], [-1, 0, 0]],  # -X
        [[0, 0, 1], [1, 0, 0], [0, 1, 0]],  # +Y
        [[1, 0, 0], [0, 0, 1], [0, -1, 0]],  # -Y
    ],
    dtype=np.float64,
).transpose(0, 2, 1)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class HeightField:
    """Square power-of-two grid of normalized heights in [0, 1]."""

    values: np.ndarray
    horizontal_scale: float = 1.0
    vertical_scale: float = 1.0
    face_id: int = 0
    body_radius: float = 1.0
    # texture-space placement of this field inside its face: (u0, v0, extent)
    offset: tuple = field(default=(0.0, 0.0, 1.0))

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise HeightFieldError(f"non-square height field {vals.shape}")
        if not _is_pow2(vals.shape[0]):
            raise HeightFieldError(f"non-power-of-two size {vals.shape[0]}")
        if np.any(~np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            bad = np.argwhere(~((vals >= 0.0) & (vals <= 1.0)))[0]
            raise HeightFieldError(f"sample out of [0,1] at texel {tuple(int(b) for b in bad)}")
        if not 0 <= self.face_id < 6:
            raise HeightFieldError(f"face_id {self.face_id} not in 0..5")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def height_ratio(self) -> float:
        """Vertical scale in body radii."""
        return self.vertical_scale / self.body_radius

    def meta(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "horizontal_scale": self.horizontal_scale,
            "vertical_scale": self.vertical_scale,
            "face_id": self.face_id,
            "body_radius": self.body_radius,
        }

    def with_values(self, values: np.ndarray) -> "HeightField":
        return HeightField(
            values,
            self.horizontal_scale,
            self.vertical_scale,
            self.face_id,
            self.body_radius,
            self.offset,
        )


def flat_field(n: int, h: float = 0.0, **scales) -> HeightField:
    return HeightField(np.full((n, n), float(h)), **scales)


# --------------------------------------------------------------------- I/O


def _read_pgm_header(data: bytes):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise HeightFieldError("malformed PGM header: truncated")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return (samples as uint array, maxval) from a binary P5 file."""
    data = Path(path).read_bytes()
    tokens, start = _read_pgm_header(data)
    if tokens[0] != b"P5":
        raise HeightFieldError(f"malformed PGM header: magic {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise HeightFieldError("malformed PGM header: non-integer field") from exc
    if not 0 < maxval < 65536 or w <= 0 or h <= 0:
        raise HeightFieldError("malformed PGM header: bad dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * dtype.itemsize
    if len(data) - start < n:
        raise HeightFieldError("malformed PGM: raster truncated")
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=start).reshape(h, w)
    return arr, maxval


def write_pgm(path, values: np.ndarray, maxval: int = 65535) -> None:
    """Write values in [0,1] as a 16-bit (or 8-bit if maxval<256) P5 file."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    q = np.rint(np.clip(values, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(q.astype(dtype).tobytes())


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def load_heightfield(path, meta: dict | None = None) -> HeightField:
    """Load a 16-bit PGM or raw float32 LE height field.

    ``meta`` supplies horizontal/vertical scale, face id and body radius; if
    omitted the ``<path>.json`` sidecar is read. Raw files require dims in the
    metadata.
    """
    path = Path(path)
    side = sidecar_path(path)
    if meta is None:
        meta = json.loads(side.read_text()) if side.exists() else {}
    scales = {
        k: meta[k]
        for k in ("horizontal_scale", "vertical_scale", "face_id", "body_radius")
        if k in meta
    }
    with open(path, "rb") as f:
        magic = f.read(2)
    # raw float data can start with any byte, so prefer suffix and sidecar dims
    is_pgm = path.suffix.lower() in (".pgm", ".pnm") or (magic[:1] == b"P" and "width" not in meta)
    if is_pgm:
        raw, maxval = read_pgm(path)
        values = raw.astype(np.float64) / maxval
    else:
        if "width" not in meta or "height" not in meta:
            raise HeightFieldError("raw float input needs width/height metadata")
        w, h = int(meta["width"]), int(meta["height"])
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != w * h:
            raise HeightFieldError(f"raw size {raw.size} != {w}x{h}")
        values = raw.reshape(h, w).astype(np.float64)
        bad = np.argwhere(~((values >= 0.0) & (values <= 1.0)))
        if bad.size:
            j, i = bad[0]
            raise HeightFieldError(
                f"sample {values[j, i]!r} out of [0,1] at texel ({int(j)}, {int(i)})"
            )
    if values.shape[0] != values.shape[1]:
        raise HeightFieldError(f"non-square height field {values.shape}")
    if not _is_pow2(values.shape[0]):
        raise HeightFieldError(f"non-power-of-two size {values.shape[0]}")
    return HeightField(values, **scales)


def save_heightfield(path, hf: HeightField, fmt: str = "pgm") -> None:
    """Write ``hf`` as PGM or raw float32 and a JSON sidecar with its scales."""
    path = Path(path)
    if fmt == "pgm":
        write_pgm(path, hf.values)
    elif fmt == "raw":
        hf.values.astype("<f4").tofile(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    sidecar_path(path).write_text(json.dumps(hf.meta(), indent=2))


# --------------------------------------------------------------- stitching


def stitch_tiles(tiles, roi) -> HeightField:
    """Assemble tiles placed at texel offsets into one field covering ``roi``.

    ``tiles`` is a sequence of ``(HeightField, (col, row))`` pairs with offsets
    in whole tiles; ``roi`` is ``(col0, row0, size)`` in texels of the tile
    grid. The returned
    field's ``offset`` is ``(u0, v0, extent)`` relative to the tile grid, so a
    tile-grid coordinate maps to ``(u - u0) / extent`` in the stitched field.
    """
    tiles = list(tiles)
    if not tiles:
        raise HeightFieldError("no tiles")
    n = tiles[0][0].N
    first = tiles[0][0]
    for hf, _ in tiles:
        if hf.N != n:
            raise HeightFieldError("mixed tile resolutions")
        if hf.face_id != first.face_id:
            raise HeightFieldError("tiles from different faces")
    col0, row0, size = (int(x) for x in roi)
    if not _is_pow2(size):
        raise HeightFieldError(f"non-power-of-two roi size {size}")
    out = np.empty((size, size))
    covered = np.zeros((size, size), dtype=bool)
    for hf, (ti, tj) in tiles:
        tc, tr = int(ti) * n, int(tj) * n
        c0, r0 = max(col0, tc), max(row0, tr)
        c1, r1 = min(col0 + size, tc + n), min(row0 + size, tr + n)
        if c0 >= c1 or r0 >= r1:
            continue
        out[r0 - row0 : r1 - row0, c0 - col0 : c1 - col0] = hf.values[r0 - tr : r1 - tr, c0 - tc : c1 - tc]
        covered[r0 - row0 : r1 - row0, c0 - col0 : c1 - col0] = True
    if not covered.all():
        j, i = np.argwhere(~covered)[0]
        raise HeightFieldError(f"coverage gap in roi at texel ({int(j) + row0}, {int(i) + col0})")
    # offsets expressed in units of one tile
    return HeightField(
        out,
        first.horizontal_scale,
        first.vertical_scale,
        first.face_id,
        first.body_radius,
        (col0 / n, row0 / n, size / n),
    )


# ------------------------------------------------------------- projections


@njit(cache=True)
def obj_to_tex_xyz(x, y, z):
    return 0.5 * x / z + 0.5, 0.5 * y / z + 0.5


@njit(cache=True)
def tex_to_dir(u, v):
    x = 2.0 * u - 1.0
    y = 2.0 * v - 1.0
    inv = 1.0 / math.sqrt(x * x + y * y + 1.0)
    return x * inv, y * inv, inv


def obj_to_tex(p) -> tuple[float, float]:
    """Gnomonic projection of a face-local point to texture coordinates."""
    x, y, z = (float(c) for c in p)
    if z <= 0.0:
        raise ProjectionError("behind face plane")
    return obj_to_tex_xyz(x, y, z)


def tex_to_obj(t, h: float, height_ratio: float = 0.0) -> np.ndarray:
    """Point at texture coordinate ``t`` and normalized height ``h``.

    ``height_ratio`` is the vertical scale in body radii, so the radial length
    is ``1 + h * height_ratio``.
    """
    u, v = t
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise ProjectionError(f"texcoord {t} outside [0,1]^2")
    d = np.array(tex_to_dir(float(u), float(v)))
    return d * (1.0 + h * height_ratio)


def face_to_body(face_id: int, p) -> np.ndarray:
    return FACE_FRAMES[face_id] @ np.asarray(p, dtype=np.float64)


def body_to_face(face_id: int, p) -> np.ndarray:
    return FACE_FRAMES[face_id].T @ np.asarray(p, dtype=np.float64)


@njit(cache=True)
def face_of(x, y, z):
    ax, ay, az = abs(x), abs(y), abs(z)
    if az >= ax and az >= ay:
        return 0 if z > 0 else 1
    if ax >= ay:
        return 2 if x > 0 else 3
    return 4 if y > 0 else 5


# ---------------------------------------------------------------- sampling


@njit(cache=True)
def point_sample(values, u, v):
    n = values.shape[0]
    i = int(math.floor(u * n))
    j = int(math.floor(v * n))
    i = min(max(i, 0), n - 1)
    j = min(max(j, 0), n - 1)
    return values[j, i]


@njit(cache=True)
def bilinear_sample(values, u, v):
    n = values.shape[0]
    x = u * n - 0.5
    y = v * n - 0.5
    i0 = int(math.floor(x))
    j0 = int(math.floor(y))
    fx = x - i0
    fy = y - j0
    i1 = min(max(i0 + 1, 0), n - 1)
    j1 = min(max(j0 + 1, 0), n - 1)
    i0 = min(max(i0, 0), n - 1)
    j0 = min(max(j0, 0), n - 1)
    a = values[j0, i0] * (1.0 - fx) + values[j0, i1] * fx
    b = values[j1, i0] * (1.0 - fx) + values[j1, i1] * fx
    return a * (1.0 - fy) + b * fy


def sample_height(hf: HeightField, t, filter: str = "bilinear") -> float:
    u, v = (float(c) for c in t)
    if filter == "point":
        return float(point_sample(hf.values, u, v))
    if filter == "bilinear":
        return float(bilinear_sample(hf.values, u, v))
    raise ValueError(f"unknown filter {filter!r}")


@dataclass(frozen=True)
class Body:
    """Six cube-face height fields sharing resolution and scales."""

    faces: tuple
    radius: float
    max_height: float

    def __post_init__(self):
        faces = tuple(self.faces)
        if len(faces) != 6:
            raise HeightFieldError("a body needs six faces")
        n = faces[0].N
        if any(f.N != n for f in faces):
            raise HeightFieldError("mixed face resolutions")
        object.__setattr__(self, "faces", faces)
        stack = np.stack([f.values for f in faces])
        stack.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    @classmethod
    def from_faces(cls, fields: dict, radius: float, max_height: float, N: int | None = None):
        """Missing faces become flat h=0 fields at the common resolution."""
        n = N or next(iter(fields.values())).N
        hs = 2.0 * radius / n
        out = []
        for f in range(6):
            if f in fields:
                hf = fields[f]
                out.append(HeightField(hf.values, hf.horizontal_scale, max_height, f, radius))
            else:
                out.append(HeightField(np.zeros((n, n)), hs, max_height, f, radius))
        return cls(tuple(out), radius, max_height)

    @property
    def N(self) -> int:
        return self.faces[0].N

    @property
    def stack(self) -> np.ndarray:
        return self._stack

    @property
    def height_ratio(self) -> float:
        return self.max_height / self.radius

    @property
    def horizontal_scale(self) -> float:
        return self.faces[0].horizontal_scale
