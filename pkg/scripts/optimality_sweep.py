"""Compare the single-interval DP minimum with an exhaustive search on row terrains.

Prints, per body scale and start height, how many random terrains give a
different minimum and the largest height error.
"""
import argparse
import math

import numpy as np

from terrain_shadow.heightfield import HeightField, tex_to_obj
from terrain_shadow.maxmip import build_max_mipmap
from terrain_shadow.oracles import brute_force_min
from terrain_shadow.shadow import ShadowRay, TraceConfig, compute_T, trace_shadow_interval


def row_terrain(rng, n, kind):
    if kind == "noise":
        return rng.random(n)
    x = np.arange(n) / n
    rows = np.zeros(n)
    for k in range(1, 60):
        rows += rng.normal() / k**1.2 * np.sin(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi))
    return (rows - rows.min()) / (rows.max() - rows.min())


def sweep(kind, radius, vscale, lift, cases, n, n_prime):
    cfg = TraceConfig((n_prime,))
    bad, worst = 0, 0.0
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        rows = row_terrain(rng, n, kind)
        hf = HeightField(np.repeat(rows[:, None], n, axis=1), 2 * radius / n, vscale, 0, radius)
        i0, j0 = n // 2 + 3, int(rng.integers(4, 100))
        u0, v0 = (i0 + 0.5) / n, (j0 + 0.5) / n
        p = tex_to_obj((u0, v0), min(rows[j0] + lift, 1.0), hf.height_ratio)
        x0 = 2 * u0 - 1
        plane = np.array([1.0, 0.0, -x0]) / math.hypot(1.0, x0)
        r = p / np.linalg.norm(p)
        t = np.cross(plane, r)
        t = t if t[1] > 0 else -t
        e = math.radians(rng.uniform(1.0, 10.0))
        L = math.cos(e) * t + math.sin(e) * r
        t1 = compute_T(p, L, cfg.start_offset / n)
        T = compute_T(p + t1 * L, L, 2 ** (n_prime - 1) / n)
        res = trace_shadow_interval(ShadowRay(p + t1 * L, L), build_max_mipmap(hf), cfg, origin=p)
        bd, bt = brute_force_min(p, L, hf, T, start=t1)
        if bd >= 1.0 and res.t_star < 0.0:
            # ray clears the whole height range; both report no occluder
            continue
        err = abs(res.delta_maxh_star - bd)
        worst = max(worst, err)
        bad += err > 1e-6 or abs(res.distance - bt) > 1e-6
    return bad, worst


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", type=int, default=60)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--levels", type=int, help="levels per interval (default log2 n)")
    args = ap.parse_args()
    n_prime = args.levels or int(math.log2(args.n))
    scales = {"moon": (1737.4e3, 10e3), "scene": (1e5, 5e3)}
    print(f"n={args.n} levels={n_prime} cases={args.cases}")
    for kind in ("smooth", "noise"):
        for label, (radius, vscale) in scales.items():
            for lift in (0.0, 0.3):
                bad, worst = sweep(kind, radius, vscale, lift, args.cases, args.n, n_prime)
                print(f"{kind:7s} {label:6s} lift={lift:.1f}  mismatches {bad:3d}/{args.cases}  worst |dh| {worst:.3g}")


if __name__ == "__main__":
    main()
