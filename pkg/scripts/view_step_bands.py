"""Refinement steps with and without pre-displacement, by ray impact parameter."""
import argparse
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from terrain_shadow.render import camera_basis, load_assets, load_scene, render_buffers

BANDS = [(0.0, 0.5), (0.5, 0.8), (0.8, 0.9), (0.9, 0.95), (0.95, 0.98), (0.98, 1.0), (1.0, 1.1)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scene", nargs="?", default=str(Path(__file__).resolve().parent.parent / "scenes" / "crater.json"))
    ap.add_argument("--resolution", type=int, help="override the height-field size")
    args = ap.parse_args()
    scene = load_scene(args.scene)
    if args.resolution:
        scene = scene.replace(body=replace(scene.body, resolution=args.resolution))
    assets = load_assets(scene)
    fast = render_buffers(scene, assets)
    slow = render_buffers(scene.replace(view=replace(scene.view, predisplace=False)), assets)
    cam = scene.camera
    pos, fwd, right, up = camera_basis(cam)
    th = math.tan(math.radians(cam.vfov_deg) / 2)
    xs = (2 * (np.arange(cam.width) + 0.5) / cam.width - 1) * th * cam.width / cam.height
    ys = (1 - 2 * (np.arange(cam.height) + 0.5) / cam.height) * th
    d = fwd[None, None, :] + xs[None, :, None] * right + ys[:, None, None] * up
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    b = np.linalg.norm(np.cross(np.broadcast_to(pos, d.shape), d), axis=-1)
    print(f"{'band':>12s} {'pixels':>7s} {'plain':>7s} {'hybrid':>7s} {'ratio':>6s}")
    for lo, hi in BANDS:
        m = (fast.hit == 1) & (b >= lo) & (b < hi)
        if m.any():
            print(f"{lo:5.2f}-{hi:<5.2f}  {int(m.sum()):7d} {slow.steps[m].mean():7.2f} "
                  f"{fast.steps[m].mean():7.2f} {slow.steps[m].sum() / fast.steps[m].sum():6.1f}")
    holes = int(np.count_nonzero((b < 1.0) & (fast.hit == 0)))
    print(f"silhouette holes inside the datum sphere: {holes}")


if __name__ == "__main__":
    main()
