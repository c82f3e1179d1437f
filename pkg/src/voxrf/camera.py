"""Pinhole camera model, ray generation and orbit pose sampling.

Conventions (fixed once, used everywhere): right-handed world, the camera
looks down +z in its own frame, image origin top-left with y down, and rays
pass through pixel centers (px + 0.5, py + 0.5). ``rotation`` maps
camera-frame vectors to world frame; ``translation`` is the camera origin in
world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray      # (3,3) world-from-camera
    translation: np.ndarray   # (3,) camera origin in world

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.ascontiguousarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.ascontiguousarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max error {err:.2e})")

    def scaled(self, factor: float) -> "Camera":
        """Camera for a resized image (same pose, scaled intrinsics)."""
        return Camera(
            fx=self.fx * factor, fy=self.fy * factor,
            cx=self.cx * factor, cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            rotation=self.rotation, translation=self.translation,
        )


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = math.inf


def ray_for_pixel(cam: Camera, px: int, py: int) -> Ray:
    """Unit-direction ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height} image")
    d_cam = np.array([
        (px + 0.5 - cam.cx) / cam.fx,
        (py + 0.5 - cam.cy) / cam.fy,
        1.0,
    ])
    d = cam.rotation @ d_cam
    d /= np.linalg.norm(d)
    return Ray(origin=cam.translation.copy(), direction=d)


def pixel_rays(cam: Camera):
    """Origins and unit directions for every pixel, row-major (y, x) order."""
    xs = (np.arange(cam.width, dtype=np.float64) + 0.5 - cam.cx) / cam.fx
    ys = (np.arange(cam.height, dtype=np.float64) + 0.5 - cam.cy) / cam.fy
    gx, gy = np.meshgrid(xs, ys)
    d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1).reshape(-1, 3)
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.translation, d.shape)
    return np.ascontiguousarray(origins), np.ascontiguousarray(d)


def project(cam: Camera, point):
    """World point -> continuous pixel coordinates (u, v) and camera-frame depth."""
    p_cam = cam.rotation.T @ (np.asarray(point, dtype=np.float64) - cam.translation)
    z = p_cam[2]
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    return u, v, z


def intersect_aabb(ray: Ray, lo, hi):
    """Slab test clamped to t >= 0; returns (t_near, t_far) or None on miss."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    t0, t1 = 0.0, math.inf
    for a in range(3):
        d = ray.direction[a]
        o = ray.origin[a]
        if abs(d) < 1e-300:
            if o < lo[a] or o > hi[a]:
                return None
            continue
        ta = (lo[a] - o) / d
        tb = (hi[a] - o) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t1 <= t0:
        return None
    return t0, t1


def orbit_cameras(n: int, radius: float, elevation: float,
                  intrinsics: Intrinsics, azimuth_offset: float = 0.0):
    """``n`` cameras at equally spaced azimuths 2*pi*k/n, all looking at the origin.

    ``elevation`` is in radians above the world x/z plane; azimuth 0 places the
    camera on the -z axis.
    """
    if n < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("radius must be positive")
    cams = []
    ce, se = math.cos(elevation), math.sin(elevation)
    for k in range(n):
        phi = 2.0 * math.pi * k / n + azimuth_offset
        pos = radius * np.array([math.sin(phi) * ce, se, -math.cos(phi) * ce])
        cams.append(look_at(pos, intrinsics))
    return cams


def look_at(position, intrinsics: Intrinsics, target=(0.0, 0.0, 0.0)) -> Camera:
    """Camera at ``position`` with +z pointing at ``target``, world +y as up."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("camera position coincides with target")
    fwd = fwd / norm
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(fwd, up)) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    return Camera(
        fx=intrinsics.fx, fy=intrinsics.fy, cx=intrinsics.cx, cy=intrinsics.cy,
        width=intrinsics.width, height=intrinsics.height,
        rotation=rot, translation=position,
    )
