"""Command-line entry point: render, bench, mipdump and compare."""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from fractions import Fraction

from .heightfield import HeightFieldError, load_heightfield, write_pgm
from .maxmip import build_max_mipmap
from .render import (
    DEBUG_CHANNELS,
    METHODS,
    SceneError,
    compare_images,
    debug_image,
    load_assets,
    load_scene,
    read_pfm,
    render_buffers,
    write_pfm,
    write_png,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ASSET = 3
EXIT_CHECK = 1
THREADS_ENV = "TERRAIN_SHADOW_THREADS"
BENCH_FIELDS = ("method", "N", "schedule", "repeat", "mean_samples", "p50_samples", "p95_samples", "wall_ms", "error")


class UsageError(Exception):
    pass


def resolve_threads(arg: int | None) -> int:
    if arg:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _fraction(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _scene_for(args):
    scene = load_scene(args.scene)
    kw = {}
    if getattr(args, "method", None):
        kw["method"] = args.method
    if getattr(args, "samples", None):
        kw["reference_samples"] = args.samples
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return scene.replace(**kw).validate() if kw else scene


def cmd_render(args) -> int:
    scene = _scene_for(args)
    res = render_buffers(scene, threads=resolve_threads(args.threads))
    if args.debug:
        write_png(args.out, debug_image(res, args.debug))
    else:
        write_png(args.out, res.image)
    if args.pfm:
        write_pfm(args.pfm, res.image)
    if args.stats:
        with open(args.stats, "w") as f:
            f.write(res.stats.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    base = _scene_for(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [base.body.resolution]
    threads = resolve_threads(args.threads)
    budget = 3 * sum(base.trace.schedule)
    rows = []
    for n in sizes:
        scene = base.replace(body=replace(base.body, resolution=n)).validate()
        assets = load_assets(scene)
        ref = None
        if args.error:
            ref = render_buffers(scene.replace(method="reference"), assets, threads).image
        for m in methods:
            for k in range(args.repeat):
                res = render_buffers(scene.replace(method=m), assets, threads)
                st = res.stats
                if m == "dp" and st.max_samples > budget:
                    print(f"dp samples {st.max_samples} exceed budget {budget}", file=sys.stderr)
                    return EXIT_CHECK
                err = "" if ref is None else f"{compare_images(res.image, ref).mean_abs_error:.6f}"
                rows.append(
                    {
                        "method": m,
                        "N": n,
                        "schedule": "-".join(str(s) for s in scene.trace.schedule),
                        "repeat": k,
                        "mean_samples": f"{st.mean_samples:.3f}",
                        "p50_samples": f"{st.p50_samples:.1f}",
                        "p95_samples": f"{st.p95_samples:.1f}",
                        "wall_ms": f"{st.wall_ms:.1f}",
                        "error": err,
                    }
                )
    rows.sort(key=lambda r: (r["method"], r["N"], r["repeat"]))
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=BENCH_FIELDS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_mipdump(args) -> int:
    hf = load_heightfield(args.height)
    pyr = build_max_mipmap(hf)
    if not 0 <= args.level < pyr.num_levels:
        raise UsageError(f"level {args.level} out of range 0..{pyr.num_levels - 1}")
    write_pgm(args.out, pyr.levels[args.level])
    return EXIT_OK


def cmd_compare(args) -> int:
    a = read_pfm(args.a)
    b = read_pfm(args.b)
    stats = compare_images(a, b, args.dark_offset)
    text = stats.to_json()
    if args.report:
        with open(args.report, "w") as f:
            f.write(text)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terrain-shadow", description="Soft terrain shadows on cube-sphere bodies.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a scene to PNG (and optionally PFM)")
    r.add_argument("--scene", required=True)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--out", required=True, help="PNG output")
    r.add_argument("--pfm")
    r.add_argument("--debug", choices=DEBUG_CHANNELS)
    r.add_argument("--stats", help="JSON stats output")
    r.add_argument("--samples", type=int, help="reference light samples")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("bench", help="sample counts and timings per method")
    b.add_argument("--scene", required=True)
    b.add_argument("--methods", default="dp,uniform")
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--sizes", help="comma-separated height-field sizes")
    b.add_argument("--error", action="store_true", help="also report error vs the reference")
    b.add_argument("--samples", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("mipdump", help="write one max-mipmap level as PGM")
    m.add_argument("--height", required=True)
    m.add_argument("--level", type=int, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mipdump)

    c = sub.add_parser("compare", help="error statistics between two PFM images")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--dark-offset", type=_fraction, default=0.0)
    c.add_argument("--report")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "repeat", 1) < 1:
            raise UsageError("--repeat must be >= 1")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneError, HeightFieldError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSET


if __name__ == "__main__":
    sys.exit(main())
