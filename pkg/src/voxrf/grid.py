"""Sparse voxel grid storage, trilinear sampling, pruning and 2x growing.

Values (density and per-channel color coefficients) live at voxel *centers*
on an R^3 lattice. Interpolation is between the 8 nearest centers; missing
or unoccupied neighbors contribute zero. Density is activated with
max(x, 0) *after* interpolation, colors with a per-channel logistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BOUNDS = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def activate_density(x):
    """Density activation: max(x, 0), applied after interpolation."""
    return np.maximum(x, 0.0)


def activate_color(x):
    """Color activation: logistic per channel, guarantees values in (0, 1)."""
    return 1.0 / (1.0 + np.exp(-x))


def color_logit(c):
    """Inverse of activate_color, for baking target colors into raw coefficients."""
    c = np.clip(c, 1e-6, 1.0 - 1e-6)
    return np.log(c / (1.0 - c))


@dataclass
class OccupancyMask:
    """Flat boolean occupancy over the full R^3 lattice."""

    resolution: int
    bits: np.ndarray  # bool, shape (R^3,)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        if self.bits.size != self.resolution**3:
            raise ValueError(
                f"mask has {self.bits.size} bits, expected {self.resolution ** 3}"
            )

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def volume(self) -> np.ndarray:
        return self.bits.reshape((self.resolution,) * 3)

    def union(self, other: "OccupancyMask") -> "OccupancyMask":
        if other.resolution != self.resolution:
            raise ValueError("resolution mismatch")
        return OccupancyMask(self.resolution, self.bits | other.bits)


def _check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if resolution < 8 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    if resolution**3 > np.iinfo(np.int64).max:
        raise ValueError(f"resolution {resolution} overflows the index space")
    return resolution


class SparseVoxelGrid:
    """Sorted coordinate list + parallel value arrays + dense slot table.

    ``indices`` are flat lattice indices ((i*R)+j)*R+k, strictly ascending.
    ``density`` holds raw (pre-activation) sigma, ``sh0`` holds the three raw
    color coefficients per voxel. A dense int32 slot table maps every lattice
    cell to its row (-1 when unoccupied) for O(1) membership tests.
    """

    def __init__(self, resolution, bounds=DEFAULT_BOUNDS, indices=None,
                 density=None, sh0=None, dtype=np.float32):
        resolution = _check_resolution(resolution)
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
        extents = hi - lo
        if not np.all(extents > 0):
            raise ValueError("bounds must have positive extent")
        if not np.allclose(extents, extents[0], rtol=0, atol=1e-12):
            raise ValueError("bounds must be a cube (equal extents per axis)")

        self.resolution = resolution
        self.lo = lo
        self.hi = hi

        if indices is None:
            indices = np.empty(0, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        if self.indices.size and (
            np.any(np.diff(self.indices) <= 0)
            or self.indices[0] < 0
            or self.indices[-1] >= resolution**3
        ):
            raise ValueError("indices must be strictly ascending and in range")

        n = self.indices.size
        if density is None:
            density = np.zeros(n, dtype=dtype)
        if sh0 is None:
            sh0 = np.zeros((n, 3), dtype=dtype)
        self.density = np.ascontiguousarray(density, dtype=dtype)
        self.sh0 = np.ascontiguousarray(sh0, dtype=dtype)
        if self.density.shape != (n,) or self.sh0.shape != (n, 3):
            raise ValueError("value arrays must match the index list")

        self._slot = None
        self._blocks = None
        self._block_size = 0

    # -- derived structures ------------------------------------------------

    @property
    def dtype(self):
        return self.density.dtype

    @property
    def num_voxels(self) -> int:
        return self.indices.size

    @property
    def voxel_size(self) -> float:
        return float((self.hi[0] - self.lo[0]) / self.resolution)

    @property
    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def slot_table(self) -> np.ndarray:
        """Dense int32 table: flat lattice index -> row index, -1 if empty."""
        if self._slot is None:
            slot = np.full(self.resolution**3, -1, dtype=np.int32)
            slot[self.indices] = np.arange(self.indices.size, dtype=np.int32)
            self._slot = slot
        return self._slot

    def occupancy(self) -> OccupancyMask:
        bits = np.zeros(self.resolution**3, dtype=bool)
        bits[self.indices] = True
        return OccupancyMask(self.resolution, bits)

    def block_mask(self, block_size: int = 8):
        """Coarse uint8 mask of blocks any sample inside which can see a voxel.

        Occupancy is dilated by one cell (the interpolation reach of a sample)
        before pooling, so a zero block is guaranteed to interpolate to exactly
        zero everywhere inside it. Depends only on occupancy, so it is cached
        across value updates.
        """
        if self._block_size == block_size:
            return self._blocks
        r = self.resolution
        occ = np.zeros((r, r, r), dtype=bool)
        occ.reshape(-1)[self.indices] = True
        reach = occ.copy()
        for axis in range(3):
            shifted = np.zeros_like(occ)
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[axis] = slice(0, r - 1)
            sl_hi[axis] = slice(1, r)
            shifted[tuple(sl_lo)] |= reach[tuple(sl_hi)]
            shifted[tuple(sl_hi)] |= reach[tuple(sl_lo)]
            reach |= shifted
        nb = (r + block_size - 1) // block_size
        pad = nb * block_size - r
        if pad:
            reach = np.pad(reach, ((0, pad),) * 3)
        blocks = reach.reshape(nb, block_size, nb, block_size, nb, block_size)
        blocks = blocks.any(axis=(1, 3, 5))
        if blocks.all():
            self._blocks = None  # dense reach: the per-sample test cannot skip
        else:
            self._blocks = np.ascontiguousarray(blocks.reshape(-1), dtype=np.uint8)
        self._block_size = block_size
        return self._blocks

    def invalidate_values(self):
        """Call after in-place edits of density/sh0 (occupancy caches stay valid)."""
        # slot table and block mask depend only on occupancy; nothing to do.

    # -- access helpers ----------------------------------------------------

    def flat_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        r = self.resolution
        return (ijk[..., 0] * r + ijk[..., 1]) * r + ijk[..., 2]

    def unflatten(self, flat) -> np.ndarray:
        r = self.resolution
        flat = np.asarray(flat, dtype=np.int64)
        k = flat % r
        j = (flat // r) % r
        i = flat // (r * r)
        return np.stack([i, j, k], axis=-1)

    def cell_centers(self, flat=None) -> np.ndarray:
        if flat is None:
            flat = self.indices
        ijk = self.unflatten(flat).astype(np.float64)
        return self.lo + (ijk + 0.5) * self.voxel_size

    def dense_raw_density(self) -> np.ndarray:
        """Raw sigma on the full lattice, zeros where unoccupied; shape (R,R,R)."""
        vol = np.zeros(self.resolution**3, dtype=np.float64)
        vol[self.indices] = self.density.astype(np.float64)
        return vol.reshape((self.resolution,) * 3)

    def copy(self) -> "SparseVoxelGrid":
        return SparseVoxelGrid(
            self.resolution, (self.lo, self.hi),
            self.indices.copy(), self.density.copy(), self.sh0.copy(),
            dtype=self.dtype,
        )

    def astype(self, dtype) -> "SparseVoxelGrid":
        return SparseVoxelGrid(
            self.resolution, (self.lo, self.hi),
            self.indices.copy(), self.density.astype(dtype), self.sh0.astype(dtype),
            dtype=dtype,
        )

    def restrict(self, mask: OccupancyMask) -> "SparseVoxelGrid":
        """New grid keeping only voxels whose lattice cell is set in ``mask``."""
        if mask.resolution != self.resolution:
            raise ValueError("mask resolution mismatch")
        keep = mask.bits[self.indices]
        return SparseVoxelGrid(
            self.resolution, (self.lo, self.hi),
            self.indices[keep], self.density[keep], self.sh0[keep],
            dtype=self.dtype,
        )


def new_dense(resolution, bounds=DEFAULT_BOUNDS, fill_sigma=0.0, fill_sh=0.0,
              dtype=np.float32) -> SparseVoxelGrid:
    """Fully occupied grid with constant fill values."""
    resolution = _check_resolution(resolution)
    n = resolution**3
    indices = np.arange(n, dtype=np.int64)
    density = np.full(n, fill_sigma, dtype=dtype)
    sh0 = np.full((n, 3), fill_sh, dtype=dtype)
    return SparseVoxelGrid(resolution, bounds, indices, density, sh0, dtype=dtype)


def sample_trilinear(grid: SparseVoxelGrid, points):
    """Interpolated raw (sigma, sh0) at world points; zeros outside the grid.

    Accepts a single point (3,) or a batch (N, 3). Returns raw, pre-activation
    values as float64.
    """
    from . import kernels

    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    sigma, sh0 = kernels.sample_trilinear(
        grid.resolution, grid.lo, grid.voxel_size,
        grid.slot_table(), grid.density, grid.sh0, pts,
    )
    if single:
        return float(sigma[0]), sh0[0]
    return sigma, sh0


def sparsity(obj) -> float:
    """Fraction of empty lattice cells: (R^3 - occupied) / R^3."""
    if isinstance(obj, OccupancyMask):
        total = obj.resolution**3
        return (total - obj.occupied_count) / total
    total = obj.resolution**3
    return (total - obj.num_voxels) / total


def prune_by_density(grid: SparseVoxelGrid, tau_sigma: float = 1e-3,
                     require_neighbors: bool = True) -> SparseVoxelGrid:
    """Drop voxels whose activated density is <= tau_sigma.

    With ``require_neighbors`` a voxel is only dropped when all six face
    neighbors are also at or below the threshold (missing neighbors count as
    empty), which protects values still inside the interpolation reach of a
    surface.
    """
    if tau_sigma < 0:
        raise ValueError("tau_sigma must be >= 0")
    r = grid.resolution
    vol = np.zeros((r, r, r), dtype=np.float64)
    vol.reshape(-1)[grid.indices] = activate_density(grid.density.astype(np.float64))
    core = vol > tau_sigma
    keep = core.copy()
    if require_neighbors:
        keep[:-1] |= core[1:]
        keep[1:] |= core[:-1]
        keep[:, :-1] |= core[:, 1:]
        keep[:, 1:] |= core[:, :-1]
        keep[:, :, :-1] |= core[:, :, 1:]
        keep[:, :, 1:] |= core[:, :, :-1]
    return grid.restrict(OccupancyMask(r, keep.reshape(-1)))


def upsample2x(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    """Double the resolution; each kept voxel spawns its 8 children.

    Child values are initialized by trilinear sampling of the parent at the
    child-center positions, with coordinates clamped to the parent lattice at
    the outer boundary so constant fields stay constant.
    """
    r = grid.resolution
    r2 = 2 * r
    if r2**3 > np.iinfo(np.int64).max:
        raise ValueError("resolution overflow")

    pijk = grid.unflatten(grid.indices)
    # 8 children per parent, ordered so the child index list stays sorted
    offs = np.array(
        [[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
    )
    cijk = (pijk[:, None, :] * 2 + offs[None, :, :]).reshape(-1, 3)
    cflat = (cijk[:, 0] * r2 + cijk[:, 1]) * r2 + cijk[:, 2]
    order = np.argsort(cflat, kind="stable")
    cijk = cijk[order]
    cflat = cflat[order]

    # child center in parent lattice coordinates, clamped at the boundary
    g = (cijk.astype(np.float64) + 0.5) / 2.0 - 0.5
    g = np.clip(g, 0.0, r - 1.0)
    base = np.minimum(g.astype(np.int64), r - 2)
    frac = g - base

    slot = grid.slot_table()
    dens64 = grid.density.astype(np.float64)
    sh064 = grid.sh0.astype(np.float64)
    sigma = np.zeros(cflat.size, dtype=np.float64)
    sh = np.zeros((cflat.size, 3), dtype=np.float64)
    for a in (0, 1):
        wx = frac[:, 0] if a else 1.0 - frac[:, 0]
        for b in (0, 1):
            wy = frac[:, 1] if b else 1.0 - frac[:, 1]
            for c in (0, 1):
                wz = frac[:, 2] if c else 1.0 - frac[:, 2]
                w = wx * wy * wz
                nb = ((base[:, 0] + a) * r + base[:, 1] + b) * r + base[:, 2] + c
                rows = slot[nb]
                valid = rows >= 0
                if np.any(valid):
                    sigma[valid] += w[valid] * dens64[rows[valid]]
                    sh[valid] += w[valid, None] * sh064[rows[valid]]

    return SparseVoxelGrid(
        r2, (grid.lo, grid.hi), cflat,
        sigma.astype(grid.dtype), sh.astype(grid.dtype), dtype=grid.dtype,
    )
