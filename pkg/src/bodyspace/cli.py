"""Command line interface.

    bodyspace gen-synthetic --out data/ --bones 4 --sets 3 --poses-per-set 8
    bodyspace train --data data/ --out run/ [--config cfg.json] [--seed 0]
    bodyspace render --checkpoint run/ckpt_final.ckpt --a 0.5 --b 0.2 --c 0.7 --out view
    bodyspace sweep --checkpoint ... --plane app-view --fixed b=0.5 --grid 3x8 --out m.png
    bodyspace eval --checkpoint ... --data data/ --out report.json [--sweep-dir dir/]
    bodyspace serve --checkpoint ... --bind 127.0.0.1:8080 [--static-dir frontend/dist]

--config points at a JSON file with any subset of the config sections; the
desk-scale preset is the default for train.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config
from .dataset import load_dataset
from .evaluate import evaluate, save_png, write_report
from .model import load_model
from .space import SpaceCoord, render_space_point, sweep_plane
from .synthetic import SynthSpec, generate_synthetic
from .train import train


def _load_config(args) -> Config:
    if args.config:
        return Config.from_json_file(args.config)
    return Config.desk()


def cmd_gen_synthetic(args):
    spec = SynthSpec(bones=args.bones, sets=args.sets, poses_per_set=args.poses_per_set,
                     image_size=args.image_size, seed=args.seed)
    out = generate_synthetic(spec, args.out)
    print(f"wrote {spec.sets * spec.poses_per_set} frames to {out}")


def cmd_train(args):
    config = _load_config(args)
    dataset = load_dataset(args.data)
    result = train(dataset, config, seed=args.seed, out_dir=args.out,
                   resume=args.resume, progress_every=args.progress_every)
    print(f"finished {result.iterations} iterations; checkpoint: {result.checkpoint}")


def cmd_render(args):
    loaded = load_model(args.checkpoint)
    out = render_space_point(loaded, SpaceCoord(args.a, args.b, args.c),
                             args.width, args.height)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    color_path = prefix.with_suffix(".png")
    alpha_path = prefix.parent / (prefix.name + "_alpha.png")
    depth_path = prefix.parent / (prefix.name + "_depth.f32")
    save_png(color_path, rgb=out.color)
    save_png(alpha_path, alpha=out.alpha, bits=16)
    depth = np.ascontiguousarray(out.depth.astype("<f4"))
    depth_path.write_bytes(depth.tobytes())
    sidecar = {
        "coord": {"a": args.a, "b": args.b, "c": args.c},
        "mapped": {"appearance": out.index.appearance, "pose": out.index.pose,
                   "source_set": out.index.source_set, "phi": out.index.phi},
        "width": out.color.shape[1],
        "height": out.color.shape[0],
        "files": {"color": color_path.name, "alpha": alpha_path.name,
                  "depth": depth_path.name},
        "depth_format": "little-endian float32, row-major",
    }
    with open(prefix.parent / (prefix.name + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2)
    print(f"wrote {color_path}, {alpha_path.name}, {depth_path.name}")


def cmd_sweep(args):
    loaded = load_model(args.checkpoint)
    try:
        axis, value = args.fixed.split("=")
        fixed = float(value)
        if axis not in ("a", "b", "c"):
            raise ValueError
    except ValueError:
        sys.exit(f"--fixed must look like b=0.5, got {args.fixed!r}")
    try:
        rows, cols = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        sys.exit(f"--grid must look like 8x8, got {args.grid!r}")
    montage, _ = sweep_plane(loaded, args.plane, fixed, rows, cols, cell=args.cell)
    save_png(args.out, rgb=montage)
    print(f"wrote {rows}x{cols} {args.plane} montage to {args.out}")


def cmd_eval(args):
    loaded = load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    frames = None
    if args.frames:
        frames = [int(v) for v in args.frames.split(",")]
    report = evaluate(loaded, dataset, sweep_dir=args.sweep_dir, frame_indices=frames)
    write_report(report, args.out)
    tv = report["training_views"]
    print(f"training views: psnr {tv['psnr_mean']:.2f} dB, mask IoU {tv['iou_mean']:.3f}")
    if "heldout_orbit" in report:
        ho = report["heldout_orbit"]
        print(f"held-out orbit: psnr {ho['psnr_mean']:.2f} dB, mask IoU {ho['iou_mean']:.3f}")
    print(f"report: {args.out}")


def cmd_serve(args):
    from .server import serve

    serve(args.checkpoint, bind=args.bind, static_dir=args.static_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bodyspace", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON config file", default=None)
    p.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic capsule-figure dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--bones", type=int, default=4)
    g.add_argument("--sets", type=int, default=3)
    g.add_argument("--poses-per-set", type=int, default=8)
    g.add_argument("--image-size", type=int, default=128)
    g.set_defaults(fn=cmd_gen_synthetic)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--progress-every", type=int, default=500)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render one (a, b, c) space point")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--a", type=float, required=True)
    r.add_argument("--b", type=float, required=True)
    r.add_argument("--c", type=float, required=True)
    r.add_argument("--width", type=int, default=None)
    r.add_argument("--height", type=int, default=None)
    r.add_argument("--out", required=True, help="output path prefix")
    r.set_defaults(fn=cmd_render)

    s = sub.add_parser("sweep", help="render a plane of the space as a montage")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--plane", required=True, choices=["app-view", "app-pose", "pose-view"])
    s.add_argument("--fixed", required=True, help="remaining axis, e.g. b=0.5")
    s.add_argument("--grid", required=True, help="ROWSxCOLS, e.g. 3x8")
    s.add_argument("--cell", type=int, default=128, help="cell raster size")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sweep)

    e = sub.add_parser("eval", help="metrics against a dataset (plus oracle orbits)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--sweep-dir", default=None, help="emit a 10-degree view sweep here")
    e.add_argument("--frames", default=None, help="comma-separated frame subset")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("serve", help="HTTP render service for a checkpoint")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--bind", default="127.0.0.1:8080")
    v.add_argument("--static-dir", default=None, help="serve a frontend build at /")
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
