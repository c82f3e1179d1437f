"""Reconstruction loss and the grid regularizers.

The regularizer family: a depth-variance term that pushes each ray's depth
spread below a surface-thickness threshold, total variation on raw densities
(exact over the full lattice or an unbiased stochastic estimate over random
contiguous index segments), and hinge coverage terms that keep both the
foreground mask and the background above a minimum share of the image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .grid import SparseVoxelGrid


@dataclass
class RegConfig:
    """Regularizer weights and thresholds.

    ``tau`` is the squared surface thickness for the depth-variance clamp;
    ``None`` resolves to (1.5 * voxel_size)^2 at the current grid resolution.
    ``eta_fg`` defaults to 0.4; use 0.1 for scenes whose object covers a small
    image fraction.
    """

    lambda_dv: float = 0.01
    tau: Optional[float] = None
    lambda_tv: float = 1e-5
    lambda_cvg_fg: float = 0.1
    lambda_cvg_bg: float = 0.1
    eta_fg: float = 0.4
    eta_bg: float = 0.1
    tv_mode: str = "exact"
    tv_segments: int = 256
    tv_segment_length: int = 64

    def __post_init__(self):
        if min(self.lambda_dv, self.lambda_tv,
               self.lambda_cvg_fg, self.lambda_cvg_bg) < 0:
            raise ValueError("loss weights must be >= 0")
        if not (0 <= self.eta_fg <= 1 and 0 <= self.eta_bg <= 1):
            raise ValueError("coverage fractions must lie in [0, 1]")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.tv_mode not in ("exact", "stochastic"):
            raise ValueError(f"unknown tv_mode {self.tv_mode!r}")
        if self.tv_segments < 1 or self.tv_segment_length < 1:
            raise ValueError("segment sampling needs positive counts")

    def resolve_tau(self, voxel_size: float) -> float:
        return self.tau if self.tau is not None else (1.5 * voxel_size) ** 2

    def resolved_for(self, grid: SparseVoxelGrid) -> "RegConfig":
        return replace(self, tau=self.resolve_tau(grid.voxel_size))


@dataclass
class LossReport:
    mse: float
    psnr: float
    l_dv: float
    l_tv: float
    l_cvg_fg: float
    l_cvg_bg: float

    @property
    def reg_total(self) -> float:
        return self.l_dv + self.l_tv + self.l_cvg_fg + self.l_cvg_bg

    @property
    def total(self) -> float:
        return self.mse + self.reg_total

    def to_dict(self) -> dict:
        return {
            "mse": self.mse, "psnr": self.psnr, "l_dv": self.l_dv,
            "l_tv": self.l_tv, "l_cvg_fg": self.l_cvg_fg,
            "l_cvg_bg": self.l_cvg_bg,
        }


def mse(rendered, target) -> float:
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    return float(np.mean((rendered - target) ** 2))


def psnr(mse_value: float) -> float:
    if mse_value <= 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse_value))


def l_dv(depth_var, alpha, cfg: RegConfig) -> float:
    """Mean over foreground pixels (alpha > 0) of lambda_dv * max(Var, tau)."""
    if cfg.tau is None:
        raise ValueError("cfg.tau is unresolved; call cfg.resolved_for(grid)")
    depth_var = np.asarray(depth_var, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if depth_var.shape != alpha.shape:
        raise ValueError("map shapes differ")
    fg = alpha > 0
    if not np.any(fg):
        return 0.0
    return float(cfg.lambda_dv * np.maximum(depth_var[fg], cfg.tau).mean())


def l_dv_grad(depth_var, alpha, cfg: RegConfig) -> np.ndarray:
    """d l_dv / d Var per pixel (the clamp gates pixels at or below tau)."""
    depth_var = np.asarray(depth_var, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    grad = np.zeros_like(depth_var)
    fg = alpha > 0
    count = int(np.count_nonzero(fg))
    if count == 0:
        return grad
    active = fg & (depth_var > cfg.tau)
    grad[active] = cfg.lambda_dv / count
    return grad


def _tv_terms(vol: np.ndarray):
    """Forward differences (missing neighbors read as zero) and their norm."""
    dx = vol.copy()
    dx[:-1] -= vol[1:]
    dy = vol.copy()
    dy[:, :-1] -= vol[:, 1:]
    dz = vol.copy()
    dz[:, :, :-1] -= vol[:, :, 1:]
    term = np.sqrt(dx * dx + dy * dy + dz * dz)
    return dx, dy, dz, term


def l_tv(grid: SparseVoxelGrid, cfg: RegConfig,
         rng: Optional[np.random.Generator] = None) -> float:
    return l_tv_grad(grid, cfg, rng, want_grad=False)[0]


def l_tv_grad(grid: SparseVoxelGrid, cfg: RegConfig,
              rng: Optional[np.random.Generator] = None, want_grad: bool = True):
    """Total-variation loss on raw densities and its gradient per occupied voxel.

    Exact mode averages sqrt(dx^2+dy^2+dz^2) over all R^3 lattice cells.
    Stochastic mode samples ``tv_segments`` contiguous runs of flat lattice
    indices (wrapping modulo R^3 so every cell has equal inclusion
    probability), reweighted to keep the estimator unbiased.
    """
    r = grid.resolution
    total = r**3
    vol = grid.dense_raw_density()
    dx, dy, dz, term = _tv_terms(vol)

    if cfg.tv_mode == "exact":
        weight = np.full(total, cfg.lambda_tv / total)
        loss = float(cfg.lambda_tv * term.sum() / total)
    else:
        if rng is None:
            raise ValueError("stochastic TV needs an rng")
        starts = rng.integers(0, total, size=cfg.tv_segments)
        cells = (starts[:, None]
                 + np.arange(cfg.tv_segment_length)[None, :]).reshape(-1) % total
        counts = np.bincount(cells, minlength=total).astype(np.float64)
        scale = cfg.lambda_tv / (cfg.tv_segments * cfg.tv_segment_length)
        weight = counts * scale
        loss = float((weight * term.reshape(-1)).sum())

    if not want_grad:
        return loss, None

    w = weight.reshape(vol.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(term > 0, 1.0 / term, 0.0)
    gx = w * dx * inv
    gy = w * dy * inv
    gz = w * dz * inv
    g = gx + gy + gz
    g[1:] -= gx[:-1]
    g[:, 1:] -= gy[:, :-1]
    g[:, :, 1:] -= gz[:, :, :-1]
    return loss, g.reshape(-1)[grid.indices]


def l_cvg(mask, eta: float, lam: float, side: str) -> float:
    """Hinge on the mean mask value: penalize covering less than ``eta``."""
    mask = np.asarray(mask, dtype=np.float64)
    if np.any((mask < 0) | (mask > 1)):
        raise ValueError("mask values must lie in [0, 1]")
    if side == "fg":
        mean = mask.mean()
    elif side == "bg":
        mean = (1.0 - mask).mean()
    else:
        raise ValueError(f"side must be 'fg' or 'bg', got {side!r}")
    return float(lam * max(0.0, eta - mean))


def l_cvg_grad(mask, eta: float, lam: float, side: str) -> np.ndarray:
    """d l_cvg / d mask per pixel (constant on the active hinge, else zero)."""
    mask = np.asarray(mask, dtype=np.float64)
    grad = np.zeros_like(mask)
    if side == "fg":
        if eta > mask.mean():
            grad[:] = -lam / mask.size
    elif side == "bg":
        if eta > (1.0 - mask).mean():
            grad[:] = lam / mask.size
    else:
        raise ValueError(f"side must be 'fg' or 'bg', got {side!r}")
    return grad
