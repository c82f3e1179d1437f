"""Analytic backward pass of the rendering pipeline plus a finite-difference
oracle.

``backprop_ray`` differentiates one composited ray with respect to its
per-sample activated densities and colors; ``scatter_adjoint`` carries sample
gradients through the activations and trilinear interpolation back onto the
raw voxel parameters. ``render_pixels_backward`` is the fused kernel path used
during fitting, and ``fd_check`` verifies any scalar function's analytic
gradients with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import kernels
from .grid import SparseVoxelGrid, activate_color
from .render import RayComposite, RenderSettings


class FDCheckError(RuntimeError):
    """The probed function returned a non-finite value."""


@dataclass
class GradientBuffer:
    """Per-voxel loss gradients, indexed like the grid's value arrays."""

    d_density: np.ndarray  # (n,) float64
    d_sh0: np.ndarray      # (n, 3) float64

    @classmethod
    def zeros(cls, grid: SparseVoxelGrid) -> "GradientBuffer":
        n = grid.num_voxels
        return cls(np.zeros(n, dtype=np.float64), np.zeros((n, 3), dtype=np.float64))

    def add(self, other: "GradientBuffer"):
        self.d_density += other.d_density
        self.d_sh0 += other.d_sh0


def backprop_ray(comp: RayComposite, upstream):
    """Per-sample gradients of one composited ray.

    ``upstream`` is (d/d color (3,), d/d alpha, d/d depth, d/d depth_var).
    Returns (d/d sigma_i (N,), d/d color_i (N, 3)) with respect to the
    *activated* sample values. Any weighted output F = sum_k w_k f_k obeys
    dF/dsigma_i = delta_i * (f_i T_i - sum_{k>=i} w_k f_k), which shows up
    below as totals minus exclusive prefix sums.
    """
    if comp.weights is None or comp.trans is None:
        raise ValueError("composite does not retain its sample chain")
    g_color_up = np.asarray(upstream[0], dtype=np.float64)
    g_alpha_up = float(upstream[1])
    g_depth_up = float(upstream[2])
    g_var_up = float(upstream[3])

    n = comp.sigmas.size
    d_sigma = np.zeros(n, dtype=np.float64)
    d_color = comp.weights[:, None] * g_color_up[None, :]
    if n == 0:
        return d_sigma, d_color

    w = comp.weights
    t_in = comp.trans
    z = comp.depths
    delta = comp.deltas
    c = comp.colors
    a_tot = comp.alpha
    z_tot = comp.depth
    zd = (z - z_tot) ** 2

    def suffix(vals):
        cs = np.cumsum(vals)
        return vals + (cs[-1] - cs)

    s_c = np.stack([suffix(w * c[:, ch]) for ch in range(3)], axis=1)
    s_a = suffix(w)
    s_z = suffix(w * z)
    s_q = suffix(w * zd)

    d_c = delta[:, None] * (c * t_in[:, None] - s_c)
    d_a = delta * (t_in - s_a)
    d_z = delta * (z * t_in - s_z)
    d_sigma = d_c @ g_color_up + g_alpha_up * d_a + g_depth_up * d_z
    if g_var_up != 0.0 and a_tot > 0.0:
        q_tot = comp.depth_var * a_tot
        d_q = delta * (zd * t_in - s_q) - 2.0 * d_z * (z_tot - a_tot * z_tot)
        d_v = (d_q - comp.depth_var * d_a) / a_tot
        d_sigma = d_sigma + g_var_up * d_v
    return d_sigma, d_color


def scatter_adjoint(grid: SparseVoxelGrid, buf: GradientBuffer, point,
                    d_sigma: float, d_color) -> None:
    """Distribute one sample's gradient onto its 8 neighbor voxels.

    Applies the activation chain rules first: the ReLU subgradient gates the
    density term (zero at and below the kink) and the logistic derivative
    scales the color term, both evaluated at the interpolated raw values.
    """
    point = np.asarray(point, dtype=np.float64)
    sig_raw, col_raw = kernels.sample_trilinear(
        grid.resolution, grid.lo, grid.voxel_size, grid.slot_table(),
        grid.density, grid.sh0, np.ascontiguousarray(point.reshape(1, 3)))
    g_sig_raw = float(d_sigma) if sig_raw[0] > 0.0 else 0.0
    c = activate_color(col_raw[0])
    g_x = np.asarray(d_color, dtype=np.float64) * c * (1.0 - c)

    g = (point - grid.lo) / grid.voxel_size - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base
    r = grid.resolution
    slot = grid.slot_table()
    for a in (0, 1):
        ix = base[0] + a
        if not 0 <= ix < r:
            continue
        wx = frac[0] if a else 1.0 - frac[0]
        for b in (0, 1):
            iy = base[1] + b
            if not 0 <= iy < r:
                continue
            wy = frac[1] if b else 1.0 - frac[1]
            for cc in (0, 1):
                iz = base[2] + cc
                if not 0 <= iz < r:
                    continue
                wz = frac[2] if cc else 1.0 - frac[2]
                row = slot[(ix * r + iy) * r + iz]
                if row < 0:
                    continue
                wgt = wx * wy * wz
                buf.d_density[row] += wgt * g_sig_raw
                buf.d_sh0[row] += wgt * g_x


def render_pixels_backward(grid: SparseVoxelGrid, origins, dirs,
                           settings: Optional[RenderSettings],
                           forward: dict, g_color, g_alpha, g_depth, g_var
                           ) -> GradientBuffer:
    """Fused kernel backward over a ray batch, re-marching the forward rays."""
    settings = settings or RenderSettings()
    blocks = grid.block_mask(settings.block_size) if settings.use_block_skip else None
    g_density, g_sh0 = kernels.render_rays_backward(
        grid.resolution, grid.lo, grid.voxel_size, grid.slot_table(),
        grid.density, grid.sh0, blocks,
        settings.block_size if blocks is not None else 0,
        origins, dirs, settings.step_for(grid),
        settings.effective_skip(), settings.effective_stop(),
        np.ascontiguousarray(forward["color"]),
        np.ascontiguousarray(forward["alpha"]),
        np.ascontiguousarray(forward["depth"]),
        np.ascontiguousarray(forward["depth_var"]),
        np.ascontiguousarray(g_color, dtype=np.float64),
        np.ascontiguousarray(g_alpha, dtype=np.float64),
        np.ascontiguousarray(g_depth, dtype=np.float64),
        np.ascontiguousarray(g_var, dtype=np.float64))
    return GradientBuffer(g_density, g_sh0)


def fd_check(fn: Callable[[], float], params: Dict[str, np.ndarray],
             grads: Dict[str, np.ndarray], h: float = 1e-4,
             max_entries: Optional[int] = None,
             rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error of analytic gradients against central differences.

    ``fn`` evaluates the scalar loss from the current contents of ``params``;
    entries are perturbed in place by +-h. ``max_entries`` limits how many
    randomly chosen entries per parameter are probed. Relative error uses
    max(|analytic|, |fd|, 1e-8) as denominator.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for key, arr in params.items():
        if arr.dtype != np.float64:
            raise ValueError(f"fd_check requires float64 parameters ({key})")
        flat = arr.reshape(-1)
        gflat = np.asarray(grads[key], dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn())
            flat[i] = orig - h
            f_minus = float(fn())
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FDCheckError(
                    f"non-finite loss while probing {key}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * h)
            ana = gflat[i]
            err = abs(ana - fd) / max(abs(ana), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
