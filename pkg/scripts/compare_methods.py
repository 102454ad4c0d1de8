"""Render each bundled scene with every method and tabulate error vs the reference."""
import argparse
import time
from pathlib import Path

from terrain_shadow.render import compare_images, load_assets, load_scene, render_buffers, write_png

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenes", nargs="*", default=["ridge", "crater", "fractal"])
    ap.add_argument("--samples", type=int, default=64, help="reference light samples")
    ap.add_argument("--out", type=Path, help="directory for PNG renders")
    args = ap.parse_args()
    print(f"{'scene':10s} {'method':10s} {'mean':>8s} {'max':>5s} {'mae':>8s} {'sigma':>8s} {'in3s':>6s} {'sec':>7s}")
    for name in args.scenes:
        path = Path(name) if name.endswith(".json") else ROOT / "scenes" / f"{name}.json"
        scene = load_scene(path)
        assets = load_assets(scene)
        ref = render_buffers(scene.replace(method="reference", reference_samples=args.samples), assets)
        for method in ("dp", "uniform"):
            t0 = time.perf_counter()
            res = render_buffers(scene.replace(method=method), assets, threads=1)
            sec = time.perf_counter() - t0
            st = compare_images(res.image, ref.image)
            s = res.stats
            print(f"{path.stem:10s} {method:10s} {s.mean_samples:8.2f} {s.max_samples:5d} "
                  f"{st.mean_abs_error:8.4f} {st.sigma:8.4f} {st.within_3sigma:6.3f} {sec:7.2f}")
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                write_png(args.out / f"{path.stem}_{method}.png", res.image)
        if args.out:
            write_png(args.out / f"{path.stem}_reference.png", ref.image)


if __name__ == "__main__":
    main()
