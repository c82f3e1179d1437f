"""Sparse voxel radiance fields on the CPU.

Fits sparse voxel grids (density + view-independent color) to multi-view
images with analytic gradients, regularizes them toward a single sharp
surface, prunes and progressively grows the grid, and renders novel views
with early ray termination and empty-space skipping.
"""

from .camera import Camera, Intrinsics, Ray, intersect_aabb, look_at, orbit_cameras, ray_for_pixel
from .grid import (
    OccupancyMask,
    SparseVoxelGrid,
    new_dense,
    prune_by_density,
    sample_trilinear,
    sparsity,
    upsample2x,
)
from .losses import LossReport, RegConfig, l_cvg, l_dv, l_tv, mse, psnr
from .render import (
    RayComposite,
    RenderOutput,
    RenderSettings,
    composite,
    fuse_visibility,
    prune_view,
    render_image,
    render_ray,
)
from .synth import AnalyticScene, bake, generate_dataset

__version__ = "0.1.0"
