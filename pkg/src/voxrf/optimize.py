"""Adam fitting of a sparse grid to posed images with progressive growing.

One fit iteration renders a batch of whole training views, forms the
reconstruction loss plus regularizers, backpropagates analytically into the
raw grid values and the optimizable background image, and applies a
bias-corrected Adam update. At stage boundaries the grid is density-pruned and
then upsampled 2x until the next stage resolution.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import io
from .camera import pixel_rays
from .grid import (
    SparseVoxelGrid,
    activate_color,
    color_logit,
    new_dense,
    prune_by_density,
    sparsity,
    upsample2x,
)
from .gradients import GradientBuffer, render_pixels_backward
from .losses import (
    LossReport,
    RegConfig,
    l_cvg,
    l_cvg_grad,
    l_dv,
    l_dv_grad,
    l_tv_grad,
    mse as mse_loss,
    psnr,
)
from .render import RenderSettings, fuse_visibility, render_image, render_pixels


class NonFiniteGradientError(RuntimeError):
    def __init__(self, key: str, step: int):
        super().__init__(f"non-finite gradient for parameter {key!r} at step {step}")
        self.key = key
        self.step = step


class FitDivergedError(RuntimeError):
    def __init__(self, iteration: int, checkpoint: Optional[str]):
        msg = f"loss became non-finite at iteration {iteration}"
        if checkpoint:
            msg += f"; last state saved to {checkpoint}"
        super().__init__(msg)
        self.iteration = iteration
        self.checkpoint = checkpoint


@dataclass
class AdamState:
    """First/second moment accumulators per named parameter array."""

    lr: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: dict, **kwargs) -> "AdamState":
        state = cls(lr=dict(lr), **kwargs)
        for key, arr in params.items():
            state.m[key] = np.zeros(arr.shape, dtype=np.float64)
            state.v[key] = np.zeros(arr.shape, dtype=np.float64)
        return state


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """Standard bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for key, arr in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {key!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(key, state.step)
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr[key] * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        arr[...] = (arr.astype(np.float64) - update).astype(arr.dtype)
    return state


@dataclass(frozen=True)
class Stage:
    grid_res: int
    iters: int
    image_res: Optional[int] = None


@dataclass
class GrowthSchedule:
    stages: Sequence[Stage]

    def __post_init__(self):
        self.stages = tuple(self.stages)
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        prev_grid = 0
        prev_img = 0
        for st in self.stages:
            if st.iters < 1:
                raise ValueError("every stage needs an iteration budget >= 1")
            if st.grid_res < prev_grid:
                raise ValueError("grid resolutions must be non-decreasing")
            if st.image_res is not None and st.image_res < prev_img:
                raise ValueError("image resolutions must be non-decreasing")
            prev_grid = st.grid_res
            prev_img = st.image_res or prev_img

    @classmethod
    def single(cls, grid_res: int, iters: int) -> "GrowthSchedule":
        return cls([Stage(grid_res, iters)])

    @classmethod
    def from_flags(cls, grid_res: int, grow: Sequence[int],
                   iters: Sequence[int]) -> "GrowthSchedule":
        resolutions = [grid_res, *grow]
        if len(iters) == 1:
            iters = list(iters) * len(resolutions)
        if len(iters) != len(resolutions):
            raise ValueError(
                f"{len(resolutions)} stages but {len(iters)} iteration budgets")
        return cls([Stage(r, i) for r, i in zip(resolutions, iters)])

    @property
    def total_iters(self) -> int:
        return sum(st.iters for st in self.stages)


@dataclass
class FitConfig:
    lr_sigma: float = 0.1
    lr_sh: float = 0.01
    lr_background: float = 0.01
    views_per_iter: Optional[int] = None  # None: all views every iteration
    init_sigma: float = 0.1
    init_sh: float = 0.0
    background_init: Sequence[float] = (0.5, 0.5, 0.5)
    optimize_background: bool = True
    boundary_prune: str = "visibility"  # or "density"
    prune_tau_sigma: float = 1e-3
    prune_tau_t: float = 1e-4
    checkpoint_every: int = 1000
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["background_init"] = list(self.background_init)
        return d


@dataclass
class FitResult:
    grid: SparseVoxelGrid
    background: np.ndarray       # (H, W, 3) activated, in (0, 1)
    background_raw: np.ndarray
    log: List[dict]
    out_dir: Optional[Path] = None


def compute_batch(grid: SparseVoxelGrid, view_rays, view_targets, bg_raw,
                  reg: RegConfig, settings: Optional[RenderSettings] = None,
                  rng: Optional[np.random.Generator] = None,
                  want_grads: bool = True):
    """Loss report (and gradients) for a batch of full views.

    ``view_rays`` is a list of (origins, dirs) ray batches, ``view_targets``
    the matching flattened (N, 3) target images. ``reg.tau`` must be resolved.
    Returns (report, grads) where grads maps density/sh0/background to arrays
    matching the parameters (background gradient is w.r.t. the raw image).
    """
    settings = settings or RenderSettings()
    nb = len(view_rays)
    bg_flat = activate_color(np.asarray(bg_raw, dtype=np.float64)).reshape(-1, 3)
    gbuf = GradientBuffer.zeros(grid) if want_grads else None
    g_bg = np.zeros_like(bg_flat) if want_grads else None
    mse_sum = dv_sum = cvg_fg_sum = cvg_bg_sum = 0.0

    for (origins, dirs), target in zip(view_rays, view_targets):
        fwd = render_pixels(grid, origins, dirs, settings)
        alpha = fwd["alpha"]
        out = fwd["color"] + (1.0 - alpha)[:, None] * bg_flat
        diff = out - target
        mse_sum += float(np.mean(diff * diff))
        dv_sum += l_dv(fwd["depth_var"], alpha, reg)
        cvg_fg_sum += l_cvg(alpha, reg.eta_fg, reg.lambda_cvg_fg, "fg")
        cvg_bg_sum += l_cvg(alpha, reg.eta_bg, reg.lambda_cvg_bg, "bg")
        if not want_grads:
            continue

        g_out = (2.0 / (diff.size * nb)) * diff
        g_alpha = -(g_out * bg_flat).sum(axis=1)
        g_alpha += l_cvg_grad(alpha, reg.eta_fg, reg.lambda_cvg_fg, "fg") / nb
        g_alpha += l_cvg_grad(alpha, reg.eta_bg, reg.lambda_cvg_bg, "bg") / nb
        g_var = l_dv_grad(fwd["depth_var"], alpha, reg) / nb
        gbuf.add(render_pixels_backward(
            grid, origins, dirs, settings, fwd,
            g_out, g_alpha, np.zeros_like(alpha), g_var))
        g_bg += g_out * (1.0 - alpha)[:, None]

    tv_loss, tv_grad = l_tv_grad(grid, reg, rng, want_grad=want_grads)
    report = LossReport(
        mse=mse_sum / nb, psnr=psnr(mse_sum / nb),
        l_dv=dv_sum / nb, l_tv=tv_loss,
        l_cvg_fg=cvg_fg_sum / nb, l_cvg_bg=cvg_bg_sum / nb)
    if not want_grads:
        return report, None

    gbuf.d_density += tv_grad
    grads = {"density": gbuf.d_density, "sh0": gbuf.d_sh0}
    bg_arr = np.asarray(bg_raw, dtype=np.float64)
    grads["background"] = (
        g_bg * bg_flat * (1.0 - bg_flat)).reshape(bg_arr.shape)
    return report, grads


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape[0] // factor, img.shape[1] // factor
    return img.reshape(h, factor, w, factor, img.shape[2]).mean(axis=(1, 3))


def _box_upsample(img: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


class _ViewSampler:
    """Deterministic epoch-shuffled view batches."""

    def __init__(self, n_views: int, per_iter: Optional[int],
                 rng: np.random.Generator):
        self.n = n_views
        self.per_iter = n_views if per_iter is None else min(per_iter, n_views)
        self.rng = rng
        self.queue: List[int] = []

    def next_batch(self) -> List[int]:
        if self.per_iter >= self.n:
            return list(range(self.n))
        while len(self.queue) < self.per_iter:
            self.queue.extend(self.rng.permutation(self.n).tolist())
        batch = self.queue[:self.per_iter]
        del self.queue[:self.per_iter]
        return batch


def evaluate(grid: SparseVoxelGrid, background, dataset: io.Dataset,
             settings: Optional[RenderSettings] = None):
    """Per-view (mse, PSNR) of renders against the dataset images."""
    out = []
    for cam, img in zip(dataset.cameras, dataset.images):
        rendered = render_image(grid, cam, background, settings)
        m = mse_loss(rendered.color, img)
        out.append((m, psnr(m)))
    return out


def fit(dataset: io.Dataset, schedule: GrowthSchedule,
        reg: Optional[RegConfig] = None, cfg: Optional[FitConfig] = None,
        out_dir=None) -> FitResult:
    """Fit a sparse grid (and background image) to the dataset.

    Deterministic for a fixed seed in single-thread mode. Raises
    FitDivergedError (after writing a checkpoint when ``out_dir`` is set) if
    the loss turns non-finite.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two views to fit")
    reg = reg or RegConfig()
    cfg = cfg or FitConfig()
    rng = np.random.default_rng(cfg.seed)
    settings = RenderSettings(threads=cfg.threads)

    out_path: Optional[Path] = None
    log_fh = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "fit_log.jsonl", "w")
        header = {
            "config": cfg.to_dict(),
            "reg": {k: getattr(reg, k) for k in (
                "lambda_dv", "tau", "lambda_tv", "lambda_cvg_fg",
                "lambda_cvg_bg", "eta_fg", "eta_bg", "tv_mode",
                "tv_segments", "tv_segment_length")},
            "stages": [[st.grid_res, st.iters, st.image_res]
                       for st in schedule.stages],
            "views": len(dataset),
        }
        log_fh.write(json.dumps(header) + "\n")

    full_h = dataset.cameras[0].height
    full_w = dataset.cameras[0].width
    grid = new_dense(schedule.stages[0].grid_res,
                     fill_sigma=cfg.init_sigma, fill_sh=cfg.init_sh)
    bg_raw = np.full((full_h, full_w, 3),
                     color_logit(np.asarray(cfg.background_init, dtype=np.float64)),
                     dtype=np.float64)
    bg_res = full_w

    sampler = _ViewSampler(len(dataset), cfg.views_per_iter, rng)
    log: List[dict] = []
    iteration = 0

    def checkpoint(tag: Optional[int] = None) -> Optional[str]:
        if out_path is None:
            return None
        name = "grid.vxgf" if tag is None else f"ckpt_{tag:06d}.vxgf"
        io.write_grid(grid, out_path / name)
        return str(out_path / name)

    def boundary_prune(g: SparseVoxelGrid) -> SparseVoxelGrid:
        # occluded voxels and voxels outside every training frustum carry no
        # supervision; dropping them before growing keeps the grown grid sparse
        if cfg.boundary_prune == "visibility":
            mask = fuse_visibility(g, dataset.cameras, cfg.prune_tau_t,
                                   cfg.prune_tau_sigma, settings)
            return g.restrict(mask)
        return prune_by_density(g, cfg.prune_tau_sigma)

    try:
        for stage in schedule.stages:
            while grid.resolution < stage.grid_res:
                grid = upsample2x(boundary_prune(grid))

            img_res = stage.image_res or full_w
            factor = full_w // img_res
            if img_res * factor != full_w:
                raise ValueError(
                    f"stage image resolution {img_res} must divide {full_w}")
            if img_res != bg_res:
                if img_res < bg_res:
                    bg_raw = _downsample(bg_raw, bg_res // img_res)
                else:
                    bg_raw = _box_upsample(bg_raw, img_res // bg_res)
                bg_res = img_res
            if factor > 1:
                cams = [cam.scaled(1.0 / factor) for cam in dataset.cameras]
                targets = [_downsample(img, factor).reshape(-1, 3)
                           for img in dataset.images]
            else:
                cams = list(dataset.cameras)
                targets = [img.reshape(-1, 3) for img in dataset.images]
            rays = [pixel_rays(cam) for cam in cams]

            resolved = reg.resolved_for(grid)
            params = {"density": grid.density, "sh0": grid.sh0}
            lrs = {"density": cfg.lr_sigma, "sh0": cfg.lr_sh}
            if cfg.optimize_background:
                params["background"] = bg_raw
                lrs["background"] = cfg.lr_background
            adam = AdamState.for_params(params, lrs)

            for _ in range(stage.iters):
                t_begin = time.perf_counter()
                batch = sampler.next_batch()
                report, grads = compute_batch(
                    grid, [rays[v] for v in batch],
                    [targets[v] for v in batch],
                    bg_raw, resolved, settings, rng)
                if not np.isfinite(report.total):
                    path = checkpoint(iteration)
                    raise FitDivergedError(iteration, path)
                if not cfg.optimize_background:
                    grads.pop("background", None)
                adam_step(params, grads, adam)
                grid.invalidate_values()

                record = {"iter": iteration, **report.to_dict(),
                          "sparsity": sparsity(grid),
                          "wall_ms": (time.perf_counter() - t_begin) * 1e3}
                log.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
                iteration += 1
                if cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
                    checkpoint(iteration)
    finally:
        if log_fh is not None:
            log_fh.close()

    background = activate_color(bg_raw)
    if out_path is not None:
        checkpoint(None)
        io.write_png(out_path / "background.png", background)
        np.save(out_path / "background_raw.npy", bg_raw)
    return FitResult(grid=grid, background=background, background_raw=bg_raw,
                     log=log, out_dir=out_path)
