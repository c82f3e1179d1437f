"""Randomized finite-difference verification of the analytic gradients.

Builds small random scenes (8^3 grids, 4x4 images, float64) and compares the
analytic gradients of the reconstruction loss, each regularizer, and the full
pipeline against central differences. Densities are drawn strictly positive
so probes stay away from the ReLU kink, and acceleration flags are disabled
for exactness; the dead zone and early-termination behavior have their own
direct tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .camera import Intrinsics, orbit_cameras, pixel_rays
from .gradients import fd_check
from .grid import SparseVoxelGrid
from .losses import RegConfig, l_tv_grad
from .optimize import compute_batch
from .render import RenderSettings

FD_SETTINGS = RenderSettings(use_skip=False, use_early_stop=False,
                             use_block_skip=False)


def random_grid(rng: np.random.Generator, res: int = 8,
                fill_prob: float = 0.75) -> SparseVoxelGrid:
    """Random float64 grid with densities bounded away from the ReLU kink."""
    n = res**3
    keep = rng.random(n) < fill_prob
    keep[rng.integers(0, n)] = True
    idx = np.flatnonzero(keep).astype(np.int64)
    density = rng.uniform(0.4, 2.5, idx.size)
    sh0 = rng.normal(0.0, 1.5, (idx.size, 3))
    return SparseVoxelGrid(res, indices=idx, density=density, sh0=sh0,
                           dtype=np.float64)


def _random_problem(rng: np.random.Generator, n_views: int = 2,
                    image_res: int = 4):
    grid = random_grid(rng)
    intr = Intrinsics.from_fov(image_res, image_res, 55.0)
    cams = orbit_cameras(n_views, 2.5, 0.3, intr,
                         azimuth_offset=rng.uniform(0, 2 * np.pi))
    rays = [pixel_rays(c) for c in cams]
    targets = [rng.uniform(0, 1, (image_res * image_res, 3)) for _ in cams]
    bg_raw = rng.normal(0.0, 0.7, (image_res, image_res, 3))
    return grid, rays, targets, bg_raw


@dataclass
class GradCheckResult:
    name: str
    seed: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _pipeline_case(name: str, seed: int, reg: RegConfig, h: float,
                   max_entries: int, tolerance: float) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    grid, rays, targets, bg_raw = _random_problem(rng)
    reg = reg.resolved_for(grid) if reg.tau is None else reg

    params = {"density": grid.density, "sh0": grid.sh0, "background": bg_raw}

    def loss() -> float:
        report, _ = compute_batch(grid, rays, targets, bg_raw, reg,
                                  FD_SETTINGS, want_grads=False)
        return report.total

    _, grads = compute_batch(grid, rays, targets, bg_raw, reg, FD_SETTINGS)
    err = fd_check(loss, params, grads, h=h, max_entries=max_entries, rng=rng)
    return GradCheckResult(name, seed, err, tolerance)


def _tv_case(seed: int, h: float, max_entries: int,
             tolerance: float) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    grid = random_grid(rng)
    reg = RegConfig(lambda_tv=1.0, tau=0.0)

    def loss() -> float:
        return l_tv_grad(grid, reg, want_grad=False)[0]

    _, grad = l_tv_grad(grid, reg)
    err = fd_check(loss, {"density": grid.density}, {"density": grad},
                   h=h, max_entries=max_entries, rng=rng)
    return GradCheckResult("l_tv_exact", seed, err, tolerance)


def run_gradcheck(seeds: int = 5, h: float = 1e-4, max_entries: int = 12,
                  tolerance: float = 1e-4,
                  log=None) -> List[GradCheckResult]:
    """The full FD suite; one result per (component, seed)."""
    cases = [
        ("mse_only", RegConfig(lambda_dv=0, lambda_tv=0,
                               lambda_cvg_fg=0, lambda_cvg_bg=0, tau=0.0)),
        ("depth_variance", RegConfig(lambda_dv=0.05, lambda_tv=0,
                                     lambda_cvg_fg=0, lambda_cvg_bg=0, tau=0.0)),
        ("coverage", RegConfig(lambda_dv=0, lambda_tv=0,
                               lambda_cvg_fg=0.2, lambda_cvg_bg=0.2,
                               eta_fg=0.9, eta_bg=0.9, tau=0.0)),
        ("pipeline", RegConfig(lambda_dv=0.05, lambda_tv=1e-3,
                               lambda_cvg_fg=0.2, lambda_cvg_bg=0.2,
                               eta_fg=0.9, eta_bg=0.9, tau=0.0)),
    ]
    results: List[GradCheckResult] = []
    for seed in range(seeds):
        for name, reg in cases:
            results.append(_pipeline_case(name, seed, reg, h,
                                          max_entries, tolerance))
        results.append(_tv_case(seed, h, max_entries, tolerance))
        if log is not None:
            for res in results[-len(cases) - 1:]:
                status = "ok" if res.passed else "FAIL"
                log(f"  seed {res.seed:3d} {res.name:<16} "
                    f"max rel err {res.max_rel_err:.3e}  {status}")
    return results
