"""Command line interface: train, render, eval, and export."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import scene_io
from .core import Camera
from .optimizer import (TrainConfig, TrainState, TrainView, TrainingDiverged,
                        compute_metrics, render_view, train)
from .rasterizer import resolve_workers
from .scene_io import (SceneLoadError, export_ply, init_from_sfm, init_random,
                       load_colmap, load_model, save_checkpoint, save_model,
                       save_png, split_train_test)

ERROR_PREFIX = "error:"


def _parse_background(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background must be r,g,b")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatlab",
                                     description="3D Gaussian splatting trainer and renderer")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_data=True):
        if needs_data:
            p.add_argument("--data", required=True, help="COLMAP dataset directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, bit-reproducible runs")
        p.add_argument("--resolution-scale", type=float, default=1.0)
        p.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0),
                       help="r,g,b linear background color")

    p_train = sub.add_parser("train", help="optimize a model from a dataset")
    common(p_train)
    p_train.add_argument("--iters", type=int, default=30000)
    p_train.add_argument("--eval-interval", type=int, default=500)

    p_render = sub.add_parser("render", help="render a trained model")
    p_render.add_argument("--model", required=True)
    p_render.add_argument("--data", help="dataset directory; renders its test split")
    p_render.add_argument("--poses", help="JSON camera list to render instead of a dataset")
    common(p_render, needs_data=False)

    p_eval = sub.add_parser("eval", help="compute metrics on the test split")
    p_eval.add_argument("--model", required=True)
    common(p_eval)

    p_export = sub.add_parser("export", help="convert a model to PLY")
    p_export.add_argument("--model", required=True)
    common(p_export, needs_data=False)
    return parser


def load_poses_file(path) -> list[Camera]:
    spec = json.loads(Path(path).read_text())
    cameras = []
    for entry in spec:
        cameras.append(Camera(
            np.asarray(entry["rotation"], dtype=np.float64),
            np.asarray(entry["translation"], dtype=np.float64),
            entry["fx"], entry["fy"], entry["cx"], entry["cy"],
            entry["width"], entry["height"],
        ))
    return cameras


def _scaled_views(images, scale: float) -> list[TrainView]:
    from .optimizer import downscale_image

    views = []
    for im in images:
        cam = im.camera if scale == 1.0 else im.camera.scaled(scale)
        gt = im.load_pixels()
        if scale != 1.0:
            gt = downscale_image(gt, cam.height, cam.width)
        views.append(TrainView(cam, gt, im.name))
    return views


def _evaluate(cloud, views, background, workers, out_dir=None):
    per_image = []
    for view in views:
        out, _, _ = render_view(cloud, view.camera, background, workers=workers)
        psnr, ssim_val = compute_metrics(out.image, view.image)
        per_image.append({"name": view.name, "psnr": psnr, "ssim": ssim_val})
        if out_dir is not None:
            save_png(Path(out_dir) / f"{Path(view.name).stem}_render.png", out.image)
    mean_psnr = float(np.mean([m["psnr"] for m in per_image])) if per_image else 0.0
    mean_ssim = float(np.mean([m["ssim"] for m in per_image])) if per_image else 0.0
    return {"mean_psnr": mean_psnr, "mean_ssim": mean_ssim, "per_image": per_image}


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = load_colmap(args.data)
    train_images, test_images = split_train_test(scene)
    if not train_images:
        raise SceneLoadError(f"dataset '{args.data}' has no training images")
    views = _scaled_views(train_images, args.resolution_scale)
    test_views = _scaled_views(test_images, args.resolution_scale)

    rng = np.random.default_rng(args.seed)
    cloud = init_from_sfm(scene, rng=rng)
    workers = resolve_workers(deterministic=args.deterministic)
    config = TrainConfig(total_iters=args.iters, background=args.background, workers=workers)
    state = TrainState(cloud, scene.scene_extent, seed=args.seed)

    started = time.perf_counter()

    def checkpoint(st):
        save_checkpoint(out_dir / f"checkpoint_{st.iteration:06d}.ckpt", st)

    try:
        train(state, views, config, iterations=args.iters,
              eval_interval=args.eval_interval, progress=print,
              checkpoint_hook=checkpoint, checkpoint_iters=(7000, 30000))
    except TrainingDiverged as exc:
        print(f"{ERROR_PREFIX} training diverged: {exc}", file=sys.stderr)
        return 1
    train_seconds = time.perf_counter() - started

    save_checkpoint(out_dir / "checkpoint_final.ckpt", state)
    save_model(out_dir / "model.splat", state.cloud)
    export_ply(out_dir / "model.ply", state.cloud)

    eval_start = time.perf_counter()
    background = np.asarray(args.background)
    report = _evaluate(state.cloud, test_views, background, workers)
    report.update({
        "iterations": state.iteration,
        "num_gaussians": len(state.cloud),
        "train_seconds": train_seconds,
        "eval_seconds": time.perf_counter() - eval_start,
        "seed": args.seed,
    })
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=2))
    print(f"trained {state.iteration} iters, {len(state.cloud)} gaussians, "
          f"test psnr={report['mean_psnr']:.2f}")
    return 0


def cmd_render(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud, _ = load_model(args.model)
    workers = resolve_workers(deterministic=args.deterministic)
    background = np.asarray(args.background)

    if args.poses:
        cameras = load_poses_file(args.poses)
        names = [f"pose_{i:03d}" for i in range(len(cameras))]
    elif args.data:
        scene = load_colmap(args.data, load_images=False)
        _, test_images = split_train_test(scene)
        cameras = [im.camera for im in test_images]
        names = [Path(im.name).stem for im in test_images]
    else:
        print(f"{ERROR_PREFIX} render needs --data or --poses", file=sys.stderr)
        return 1
    if args.resolution_scale != 1.0:
        cameras = [c.scaled(args.resolution_scale) for c in cameras]

    started = time.perf_counter()
    for cam, name in zip(cameras, names):
        out, _, _ = render_view(cloud, cam, background, workers=workers)
        save_png(out_dir / f"{name}.png", out.image)
    elapsed = time.perf_counter() - started
    fps = len(cameras) / elapsed if elapsed > 0 else float("inf")
    print(f"rendered {len(cameras)} frames in {elapsed:.2f}s ({fps:.2f} fps)")
    return 0


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud, _ = load_model(args.model)
    scene = load_colmap(args.data)
    _, test_images = split_train_test(scene)
    test_views = _scaled_views(test_images, args.resolution_scale)
    workers = resolve_workers(deterministic=args.deterministic)
    report = _evaluate(cloud, test_views, np.asarray(args.background), workers)
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=2))
    print(f"eval: mean psnr={report['mean_psnr']:.2f} ssim={report['mean_ssim']:.4f}")
    return 0


def cmd_export(args) -> int:
    out = Path(args.out)
    if out.suffix != ".ply":
        out = out / "model.ply"
    out.parent.mkdir(parents=True, exist_ok=True)
    cloud, _ = load_model(args.model)
    export_ply(out, cloud)
    print(f"wrote {out} ({len(cloud)} gaussians)")
    return 0


COMMANDS = {"train": cmd_train, "render": cmd_render, "eval": cmd_eval, "export": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SceneLoadError, scene_io.ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"{ERROR_PREFIX} {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
