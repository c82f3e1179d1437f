"""Ray-marching kernels with a compiled core and a pure-NumPy fallback.

The compiled backend is selected at import when available; otherwise the
NumPy implementation takes over with identical semantics. Use
:func:`set_backend` to switch explicitly (e.g. for the backend comparison
benchmark or for testing).
"""

from __future__ import annotations

from . import _python

try:
    from . import _native
except ImportError:  # pragma: no cover - source checkout without built ext
    _native = None

_backend = _native if _native is not None else _python


def backend_name() -> str:
    return _backend.NAME


def available_backends():
    names = ["python"]
    if _native is not None:
        names.insert(0, "native")
    return names


def get_backend(name: str):
    if name == "python":
        return _python
    if name == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        return _native
    raise ValueError(f"unknown backend {name!r}")


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previously active name."""
    global _backend
    previous = _backend.NAME
    _backend = get_backend(name)
    return previous


def sample_trilinear(res, lo, voxel, slot, density, sh0, points):
    return _backend.sample_trilinear(res, lo, voxel, slot, density, sh0, points)


def render_rays(res, lo, voxel, slot, density, sh0, blocks, block_size,
                origins, dirs, step, sigma_skip, t_stop):
    return _backend.render_rays(res, lo, voxel, slot, density, sh0,
                                blocks, block_size, origins, dirs,
                                step, sigma_skip, t_stop)


def render_rays_backward(res, lo, voxel, slot, density, sh0, blocks, block_size,
                         origins, dirs, step, sigma_skip, t_stop,
                         color, alpha, depth, depth_var,
                         g_color, g_alpha, g_depth, g_var):
    return _backend.render_rays_backward(
        res, lo, voxel, slot, density, sh0, blocks, block_size,
        origins, dirs, step, sigma_skip, t_stop,
        color, alpha, depth, depth_var, g_color, g_alpha, g_depth, g_var)


def visit_mask(res, lo, voxel, slot, density, blocks, block_size,
               origins, dirs, step, tau_t, tau_sigma, sigma_skip, t_stop,
               mark_neighbors):
    return _backend.visit_mask(res, lo, voxel, slot, density, blocks, block_size,
                               origins, dirs, step, tau_t, tau_sigma,
                               sigma_skip, t_stop, mark_neighbors)
