"""Command-line interface.

Subcommands: synth (oracle datasets), fit (dataset -> grid), render, prune,
stats, bench (per-frame timing, optionally comparing kernel backends), and
gradcheck (finite-difference suite). Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import io, kernels
from .camera import Intrinsics, orbit_cameras
from .checks import run_gradcheck
from .grid import prune_by_density, sparsity
from .losses import RegConfig
from .optimize import FitConfig, GrowthSchedule, evaluate, fit
from .render import (
    DEFAULT_TAU_SIGMA,
    DEFAULT_TAU_T,
    RenderSettings,
    fuse_visibility,
    render_image,
)
from .synth import AnalyticScene, generate_dataset


def _parse_color(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return (parts[0],) * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("color must be one or three values")
    return tuple(parts)


def _parse_int_list(text: str):
    return [int(p) for p in text.split(",") if p]


def _settings(args) -> RenderSettings:
    return RenderSettings(
        use_skip=not getattr(args, "no_skip", False),
        use_early_stop=not getattr(args, "no_early_stop", False),
        threads=getattr(args, "threads", 0) or 0,
    )


def _scene_from_args(args) -> AnalyticScene:
    if args.scene == "sphere":
        return AnalyticScene.sphere(radius=args.radius, sigma_max=args.sigma_max,
                                    softness=args.softness)
    if args.scene == "two-spheres":
        return AnalyticScene.two_spheres(sigma_max=args.sigma_max,
                                         softness=args.softness)
    return AnalyticScene.axis_boxes(sigma_max=args.sigma_max,
                                    softness=args.softness)


def _cmd_synth(args) -> int:
    scene = _scene_from_args(args)
    generate_dataset(
        scene, args.views, args.res, background=args.background,
        bake_resolution=args.bake_res, supersample=args.supersample,
        orbit_radius=args.orbit_radius,
        elevation=math.radians(args.elevation),
        azimuth_offset=math.radians(args.azimuth_offset),
        fov_deg=args.fov, out_dir=args.out, seed=args.seed)
    print(f"wrote {args.views} views at {args.res}x{args.res} to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    dataset = io.load_dataset(args.data)
    schedule = GrowthSchedule.from_flags(args.grid_res, args.grow, args.iters)
    reg = RegConfig(
        lambda_dv=args.lambda_dv, tau=args.tau, lambda_tv=args.lambda_tv,
        lambda_cvg_fg=args.lambda_cvg_fg, lambda_cvg_bg=args.lambda_cvg_bg,
        eta_fg=args.eta_fg, eta_bg=args.eta_bg, tv_mode=args.tv_mode)
    cfg = FitConfig(
        lr_sigma=args.lr_sigma, lr_sh=args.lr_sh, lr_background=args.lr_bg,
        views_per_iter=args.views_per_iter,
        background_init=args.background_init,
        checkpoint_every=args.checkpoint_every,
        seed=args.seed, threads=args.threads)
    started = time.perf_counter()
    result = fit(dataset, schedule, reg, cfg, out_dir=args.out)
    elapsed = time.perf_counter() - started
    final = result.log[-1]
    print(f"fit finished: {len(result.log)} iterations in {elapsed:.1f}s, "
          f"final mse {final['mse']:.3e} (psnr {final['psnr']:.2f} dB), "
          f"sparsity {final['sparsity']:.3f}")
    print(f"outputs in {result.out_dir}")
    if args.holdout:
        holdout = io.load_dataset(args.holdout)
        scores = evaluate(result.grid, result.background, holdout,
                          RenderSettings(threads=args.threads))
        mean_psnr = sum(p for _, p in scores) / len(scores)
        print(f"holdout psnr: {mean_psnr:.2f} dB over {len(scores)} views")
    return 0


def _cmd_render(args) -> int:
    grid = io.read_grid(args.grid)
    cam = io.read_camera(args.camera)
    if args.background and Path(args.background).exists():
        background = io.read_png(args.background)
    elif args.background:
        background = _parse_color(args.background)
    else:
        background = (0.0, 0.0, 0.0)
    out = render_image(grid, cam, background, _settings(args))
    io.write_png(args.out, out.color)
    if args.depth:
        io.write_float_map(args.depth, out.depth)
    if args.alpha:
        io.write_float_map(args.alpha, out.alpha)
    stats = out.stats
    print(f"rendered {cam.width}x{cam.height} in {stats.wall_ms:.1f} ms "
          f"({stats.samples_evaluated} samples, "
          f"{stats.rays_early_stopped} rays early-stopped)")
    return 0


def _cmd_prune(args) -> int:
    grid = io.read_grid(args.grid)
    before = grid.num_voxels
    if args.views > 0:
        intr = Intrinsics.from_fov(args.view_res, args.view_res, args.fov)
        cams = orbit_cameras(args.views, args.orbit_radius,
                             math.radians(args.elevation), intr)
        mask = fuse_visibility(grid, cams, args.tau_t, args.tau_sigma,
                               _settings(args))
        grid = grid.restrict(mask)
    else:
        grid = prune_by_density(grid, args.tau_sigma)
    io.write_grid(grid, args.out)
    print(f"pruned {before} -> {grid.num_voxels} voxels "
          f"(sparsity {sparsity(grid):.4f}), wrote {args.out}")
    return 0


def _cmd_stats(args) -> int:
    grid = io.read_grid(args.grid)
    size = Path(args.grid).stat().st_size
    print(f"resolution: {grid.resolution}^3")
    print(f"voxels: {grid.num_voxels}")
    print(f"sparsity: {sparsity(grid)}")
    print(f"voxel_size: {grid.voxel_size}")
    print(f"file_size_bytes: {size}")
    return 0


def _bench_backend(grid, cams, frames: int, settings: RenderSettings):
    times = []
    stats_total = 0
    for k in range(frames):
        cam = cams[k % len(cams)]
        t0 = time.perf_counter()
        out = render_image(grid, cam, (0.0, 0.0, 0.0), settings)
        times.append(time.perf_counter() - t0)
        stats_total += out.stats.samples_evaluated
    per_frame = statistics.median(times)
    return per_frame, stats_total


def _cmd_bench(args) -> int:
    t0 = time.perf_counter()
    grid = io.read_grid(args.grid)
    grid.slot_table()
    grid.block_mask()
    load_ms = (time.perf_counter() - t0) * 1e3

    intr = Intrinsics.from_fov(args.res, args.res, args.fov)
    cams = orbit_cameras(16, args.orbit_radius, math.radians(args.elevation),
                         intr)
    settings = _settings(args)

    backends = (kernels.available_backends() if args.backend == "both"
                else [args.backend] if args.backend != "active"
                else [kernels.backend_name()])
    print(f"scene load: {load_ms:.1f} ms "
          f"({grid.num_voxels} voxels, {grid.resolution}^3)")
    previous = kernels.backend_name()
    try:
        for name in backends:
            kernels.set_backend(name)
            per_frame, samples = _bench_backend(grid, cams, args.frames, settings)
            print(f"backend {name:<7} {args.res}x{args.res}: "
                  f"per-frame {per_frame * 1e3:.2f} ms, "
                  f"fps {1.0 / per_frame:.1f}, "
                  f"samples/frame {samples // args.frames}")
    finally:
        kernels.set_backend(previous)
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(seeds=args.seeds, h=args.h,
                            max_entries=args.max_entries,
                            log=print if args.verbose else None)
    worst = max(results, key=lambda r: r.max_rel_err)
    failed = [r for r in results if not r.passed]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} checks passed, "
          f"worst rel err {worst.max_rel_err:.3e} ({worst.name}, seed {worst.seed})")
    if failed:
        for r in failed:
            print(f"  FAIL {r.name} seed {r.seed}: {r.max_rel_err:.3e} "
                  f">= {r.tolerance:.1e}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxrf",
        description="Sparse voxel radiance fields: fit, render, prune, measure.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate an analytic oracle dataset")
    p.add_argument("--scene", choices=("sphere", "two-spheres", "axis-boxes"),
                   default="sphere")
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--out", required=True)
    p.add_argument("--bake-res", type=int, default=128)
    p.add_argument("--supersample", type=int, default=2)
    p.add_argument("--radius", type=float, default=0.5, help="sphere radius")
    p.add_argument("--sigma-max", type=float, default=40.0)
    p.add_argument("--softness", type=float, default=0.08)
    p.add_argument("--orbit-radius", type=float, default=2.2)
    p.add_argument("--elevation", type=float, default=15.0, help="degrees")
    p.add_argument("--azimuth-offset", type=float, default=0.0, help="degrees")
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--background", type=_parse_color, default=(0.0, 0.0, 0.0))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit a sparse grid to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-res", type=int, default=32)
    p.add_argument("--grow", type=_parse_int_list, default=[],
                   help="comma list of grid resolutions to grow to")
    p.add_argument("--iters", type=_parse_int_list, default=[2000],
                   help="iteration budget per stage (single value repeats)")
    p.add_argument("--lr-sigma", type=float, default=0.1)
    p.add_argument("--lr-sh", type=float, default=0.01)
    p.add_argument("--lr-bg", type=float, default=0.01)
    p.add_argument("--lambda-dv", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=None,
                   help="depth-variance clamp; default (1.5*voxel)^2")
    p.add_argument("--lambda-tv", type=float, default=1e-5)
    p.add_argument("--lambda-cvg-fg", type=float, default=0.1)
    p.add_argument("--lambda-cvg-bg", type=float, default=0.1)
    p.add_argument("--eta-fg", type=float, default=0.4)
    p.add_argument("--eta-bg", type=float, default=0.1)
    p.add_argument("--tv-mode", choices=("exact", "stochastic"), default="exact")
    p.add_argument("--views-per-iter", type=int, default=None,
                   help="views per optimizer step (default: all)")
    p.add_argument("--boundary-prune", choices=("visibility", "density"),
                   default="visibility",
                   help="pruning rule applied before each grid growth")
    p.add_argument("--background-init", type=_parse_color, default=(0.5, 0.5, 0.5))
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--holdout", default=None,
                   help="dataset directory to evaluate after fitting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("render", help="render a grid from a camera")
    p.add_argument("--grid", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", default=None, help=".png (normalized) or .npy")
    p.add_argument("--alpha", default=None, help=".png (normalized) or .npy")
    p.add_argument("--background", default=None,
                   help="constant r,g,b or a PNG path")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--no-skip", action="store_true")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("prune", help="prune a grid by density or fused visibility")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-sigma", type=float, default=DEFAULT_TAU_SIGMA)
    p.add_argument("--tau-t", type=float, default=DEFAULT_TAU_T)
    p.add_argument("--views", type=int, default=0,
                   help="fuse visibility over N orbit views (0: density only)")
    p.add_argument("--view-res", type=int, default=256)
    p.add_argument("--orbit-radius", type=float, default=2.2)
    p.add_argument("--elevation", type=float, default=15.0)
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("stats", help="grid statistics")
    p.add_argument("--grid", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("bench", help="per-frame render timing")
    p.add_argument("--grid", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--orbit-radius", type=float, default=2.2)
    p.add_argument("--elevation", type=float, default=15.0)
    p.add_argument("--backend", choices=("active", "native", "python", "both"),
                   default="active")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--no-skip", action="store_true")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=12)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
