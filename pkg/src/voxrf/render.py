"""Volume rendering of a sparse grid: compositing, image rendering, and the
visibility-based pruning operator.

The fast path (render_pixels / render_image) goes through the selected kernel
backend; render_ray and composite form the slow reference path that keeps the
full per-sample chain for inspection, tests and the analytic backward pass.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .camera import Camera, Ray, intersect_aabb, pixel_rays
from .grid import OccupancyMask, SparseVoxelGrid, activate_color, activate_density

DEFAULT_TAU_T = 1e-4
DEFAULT_TAU_SIGMA = 1e-3


@dataclass
class RenderSettings:
    """Sampling and termination constants.

    ``step_size`` is a multiple of the voxel size; samples with activated
    density below ``sigma_skip`` contribute nothing, and a ray terminates
    once its transmittance falls below ``t_stop``. The flags exist so tests
    can compare accelerated and exhaustive renders.
    """

    step_size: float = 0.5
    sigma_skip: float = 1e-10
    t_stop: float = 1e-7
    use_skip: bool = True
    use_early_stop: bool = True
    use_block_skip: bool = True
    block_size: int = 8
    threads: int = 0  # 0: VOXRF_THREADS env var or 1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.sigma_skip < 0 or self.t_stop < 0:
            raise ValueError("thresholds must be >= 0")

    def step_for(self, grid: SparseVoxelGrid) -> float:
        return self.step_size * grid.voxel_size

    def effective_skip(self) -> float:
        return self.sigma_skip if self.use_skip else 0.0

    def effective_stop(self) -> float:
        return self.t_stop if self.use_early_stop else 0.0

    def thread_count(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("VOXRF_THREADS", "")
        if env.isdigit() and int(env) > 0:
            return int(env)
        return 1


@dataclass
class RayComposite:
    """Per-sample chain of one ray plus its composited outputs."""

    colors: np.ndarray    # (N, 3) activated colors in [0, 1]
    sigmas: np.ndarray    # (N,) activated densities
    deltas: np.ndarray    # (N,) segment lengths
    depths: np.ndarray    # (N,) depth along the ray
    alphas: np.ndarray    # (N,)
    trans: np.ndarray     # (N,) transmittance at each sample
    weights: np.ndarray   # (N,) trans * alpha
    color: np.ndarray     # (3,)
    alpha: float
    depth: float
    depth_var: float


@dataclass
class RenderStats:
    samples_evaluated: int = 0
    rays_early_stopped: int = 0
    wall_ms: float = 0.0


@dataclass
class RenderOutput:
    color: np.ndarray       # (H, W, 3) composed image in [0, 1]
    alpha: np.ndarray       # (H, W) foreground mask
    depth: np.ndarray       # (H, W)
    depth_var: np.ndarray   # (H, W)
    stats: RenderStats = field(default_factory=RenderStats)


def composite(colors, sigmas, deltas, depths) -> RayComposite:
    """Front-to-back alpha composition of one ray's samples.

    alpha_i = 1 - exp(-sigma_i * delta_i), T_1 = 1, T_{i+1} = T_i (1 - alpha_i).
    The accumulated depth is the weight-weighted sum of sample depths and the
    depth variance normalizes the spread around it by the accumulated alpha.
    """
    colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=np.float64))
    deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
    depths = np.atleast_1d(np.asarray(depths, dtype=np.float64))
    n = sigmas.size
    if colors.shape != (n, 3) or deltas.shape != (n,) or depths.shape != (n,):
        raise ValueError("sample arrays must share a common length")
    if np.any(sigmas < 0):
        raise ValueError("sigma must be >= 0")
    if np.any(deltas <= 0):
        raise ValueError("delta must be > 0")
    if np.any((colors < 0) | (colors > 1)):
        raise ValueError("colors must lie in [0, 1]")

    alphas = 1.0 - np.exp(-sigmas * deltas)
    trans = np.concatenate([[1.0], np.cumprod(1.0 - alphas)[:-1]])
    weights = trans * alphas
    color = (weights[:, None] * colors).sum(axis=0)
    alpha = float(weights.sum())
    depth = float((weights * depths).sum())
    if alpha > 0:
        depth_var = float((weights * (depths - depth) ** 2).sum() / alpha)
    else:
        depth_var = 0.0
    return RayComposite(colors, sigmas, deltas, depths, alphas, trans, weights,
                        color, alpha, depth, depth_var)


def render_ray(grid: SparseVoxelGrid, ray: Ray,
               settings: Optional[RenderSettings] = None) -> RayComposite:
    """Reference per-ray march retaining the sample chain.

    Samples at t = t_near + (j + 0.5) * step until t_far; values come from
    trilinear interpolation followed by the activations. Skipped samples are
    excluded from the chain (they contribute nothing either way) and early
    termination truncates it.
    """
    settings = settings or RenderSettings()
    step = settings.step_for(grid)
    hit = intersect_aabb(ray, grid.lo, grid.hi)
    if hit is None:
        return composite(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0))
    t0, t1 = hit
    q = (t1 - t0) / step - 0.5
    ns = int(math.ceil(q)) if q > 0 else 0
    if ns <= 0:
        return composite(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0))

    ts = t0 + (np.arange(ns) + 0.5) * step
    pts = ray.origin[None, :] + ray.direction[None, :] * ts[:, None]
    sig_raw, col_raw = kernels.sample_trilinear(
        grid.resolution, grid.lo, grid.voxel_size, grid.slot_table(),
        grid.density, grid.sh0, np.ascontiguousarray(pts))
    sig = activate_density(sig_raw)
    keep = np.ones(ns, dtype=bool)
    if settings.use_skip:
        keep &= sig >= settings.sigma_skip
    sig = sig[keep]
    ts = ts[keep]
    col = activate_color(col_raw[keep])

    if settings.use_early_stop and sig.size:
        trans_after = np.cumprod(np.exp(-sig * step))
        below = np.flatnonzero(trans_after < settings.t_stop)
        if below.size:
            cut = below[0] + 1  # the triggering sample still contributes
            sig = sig[:cut]
            ts = ts[:cut]
            col = col[:cut]

    return composite(col, sig, np.full(sig.size, step), ts)


def _background_image(background, height, width) -> np.ndarray:
    if background is None:
        return np.zeros((height, width, 3))
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim == 0:
        return np.full((height, width, 3), float(bg))
    if bg.shape == (3,):
        return np.broadcast_to(bg, (height, width, 3))
    if bg.shape == (height, width, 3):
        return bg
    raise ValueError(
        f"background shape {bg.shape} does not match image {height}x{width}")


def render_pixels(grid: SparseVoxelGrid, origins, dirs,
                  settings: Optional[RenderSettings] = None) -> dict:
    """Kernel-backed forward render of a ray batch (foreground only)."""
    settings = settings or RenderSettings()
    blocks = grid.block_mask(settings.block_size) if settings.use_block_skip else None
    args = (grid.resolution, grid.lo, grid.voxel_size, grid.slot_table(),
            grid.density, grid.sh0, blocks,
            settings.block_size if blocks is not None else 0)
    step = settings.step_for(grid)
    skip = settings.effective_skip()
    stop = settings.effective_stop()
    threads = settings.thread_count()
    n = origins.shape[0]
    if threads <= 1 or n < 4 * threads:
        return kernels.render_rays(*args, origins, dirs, step, skip, stop)

    from concurrent.futures import ThreadPoolExecutor

    bounds = [(i * n // threads, (i + 1) * n // threads) for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda se: kernels.render_rays(
                *args, origins[se[0]:se[1]], dirs[se[0]:se[1]], step, skip, stop),
            bounds))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def render_image(grid: SparseVoxelGrid, camera: Camera, background=None,
                 settings: Optional[RenderSettings] = None) -> RenderOutput:
    """Render every pixel and alpha-compose the result over the background."""
    settings = settings or RenderSettings()
    h, w = camera.height, camera.width
    bg = _background_image(background, h, w)
    start = time.perf_counter()
    origins, dirs = pixel_rays(camera)
    out = render_pixels(grid, origins, dirs, settings)
    alpha = out["alpha"].reshape(h, w)
    color = out["color"].reshape(h, w, 3) + (1.0 - alpha)[:, :, None] * bg
    wall_ms = (time.perf_counter() - start) * 1e3
    stats = RenderStats(
        samples_evaluated=int(out["n_eval"].sum()),
        rays_early_stopped=int(out["stopped"].sum()),
        wall_ms=wall_ms,
    )
    return RenderOutput(
        color=color, alpha=alpha,
        depth=out["depth"].reshape(h, w),
        depth_var=out["depth_var"].reshape(h, w),
        stats=stats,
    )


def prune_view(grid: SparseVoxelGrid, camera: Camera,
               tau_t: float = DEFAULT_TAU_T, tau_sigma: float = DEFAULT_TAU_SIGMA,
               settings: Optional[RenderSettings] = None,
               attribute_neighbors: bool = False) -> OccupancyMask:
    """Voxels of this view worth keeping: some sample inside them has
    transmittance > tau_t and density > tau_sigma.

    Samples are attributed to the lattice cell containing them (or to their 8
    interpolation neighbors with ``attribute_neighbors``). Voxels never touched
    by a qualifying sample are discarded, which drops both occluded and empty
    regions.
    """
    if tau_t < 0 or tau_sigma < 0:
        raise ValueError("thresholds must be >= 0")
    settings = settings or RenderSettings()
    origins, dirs = pixel_rays(camera)
    blocks = grid.block_mask(settings.block_size) if settings.use_block_skip else None
    visited = kernels.visit_mask(
        grid.resolution, grid.lo, grid.voxel_size, grid.slot_table(),
        grid.density, blocks, settings.block_size if blocks is not None else 0,
        origins, dirs, settings.step_for(grid), tau_t, tau_sigma,
        settings.effective_skip(), settings.effective_stop(),
        attribute_neighbors)
    bits = visited.astype(bool) & grid.occupancy().bits
    return OccupancyMask(grid.resolution, bits)


def fuse_visibility(grid: SparseVoxelGrid, cameras,
                    tau_t: float = DEFAULT_TAU_T,
                    tau_sigma: float = DEFAULT_TAU_SIGMA,
                    settings: Optional[RenderSettings] = None) -> OccupancyMask:
    """Union of per-view pruning masks over all cameras."""
    if not cameras:
        raise ValueError("need at least one camera")
    mask = prune_view(grid, cameras[0], tau_t, tau_sigma, settings)
    for cam in cameras[1:]:
        mask = mask.union(prune_view(grid, cam, tau_t, tau_sigma, settings))
    return mask
