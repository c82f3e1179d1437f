"""File formats: binary grid files, camera JSON, PNG images, dataset layout.

Grid file layout (all integers little-endian):

    magic   4 bytes  "VXGF"
    version u16      = 1
    R_G     u32
    bounds  6 x f64  (lo.xyz, hi.xyz)
    count   u64
    records count x { index u64, sigma f32, sh0 3 x f32 }

Record indices are flat ((i*R)+j)*R+k and strictly ascending; trailing bytes
are rejected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .camera import Camera
from .grid import SparseVoxelGrid

GRID_MAGIC = b"VXGF"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sHIddddddQ")
_RECORD_DTYPE = np.dtype([("index", "<u8"), ("sigma", "<f4"), ("sh0", "<f4", (3,))])


class GridFileError(ValueError):
    """Malformed grid file; ``offset`` locates the violation in bytes."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def write_grid(grid: SparseVoxelGrid, path) -> None:
    lo, hi = grid.bounds
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, grid.resolution,
                          lo[0], lo[1], lo[2], hi[0], hi[1], hi[2],
                          grid.num_voxels)
    records = np.empty(grid.num_voxels, dtype=_RECORD_DTYPE)
    records["index"] = grid.indices
    records["sigma"] = grid.density.astype(np.float32)
    records["sh0"] = grid.sh0.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_grid(path, dtype=np.float32) -> SparseVoxelGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridFileError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(data)}",
            len(data))
    magic, version, res, lx, ly, lz, hx, hy, hz, count = \
        _HEADER.unpack_from(data, 0)
    if magic != GRID_MAGIC:
        raise GridFileError(f"bad magic {magic!r}", 0)
    if version != GRID_VERSION:
        raise GridFileError(f"unsupported version {version}", 4)
    expected = _HEADER.size + count * _RECORD_DTYPE.itemsize
    if len(data) < expected:
        raise GridFileError(
            f"truncated records: expected {expected} bytes, got {len(data)}",
            len(data))
    if len(data) > expected:
        raise GridFileError(
            f"{len(data) - expected} trailing bytes after {count} records",
            expected)
    records = np.frombuffer(data, dtype=_RECORD_DTYPE,
                            count=count, offset=_HEADER.size)
    indices = records["index"].astype(np.int64)
    if count:
        bad = np.flatnonzero(np.diff(indices) <= 0)
        if bad.size:
            raise GridFileError(
                "record indices not strictly ascending",
                _HEADER.size + int(bad[0] + 1) * _RECORD_DTYPE.itemsize)
        if indices[0] < 0 or indices[-1] >= res**3:
            raise GridFileError(
                f"record index out of range for resolution {res}",
                _HEADER.size)
    try:
        return SparseVoxelGrid(
            res, ((lx, ly, lz), (hx, hy, hz)), indices,
            records["sigma"].astype(dtype), records["sh0"].astype(dtype),
            dtype=dtype)
    except ValueError as exc:
        raise GridFileError(str(exc), 4) from exc


def write_camera(cam: Camera, path) -> None:
    doc = {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "R": [float(v) for v in cam.rotation.reshape(-1)],
        "t": [float(v) for v in cam.translation],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_camera(path) -> Camera:
    with open(path) as fh:
        doc = json.load(fh)
    rot = np.asarray(doc["R"], dtype=np.float64).reshape(3, 3)
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > 1e-4:
        raise ValueError(
            f"{path}: rotation is not orthonormal (max error {err:.2e})")
    if err > 1e-9:
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        if np.linalg.det(rot) < 0:
            u[:, -1] = -u[:, -1]
            rot = u @ vt
    return Camera(
        fx=float(doc["fx"]), fy=float(doc["fy"]),
        cx=float(doc["cx"]), cy=float(doc["cy"]),
        width=int(doc["width"]), height=int(doc["height"]),
        rotation=rot, translation=np.asarray(doc["t"], dtype=np.float64),
    )


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """8-bit PNG; float input is encoded as round(255 * clamp(v, 0, 1))."""
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """PNG as float in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float64) / 255.0


def write_float_map(path, arr: np.ndarray) -> None:
    """Raw float sidecar (.npy) or max-normalized grayscale PNG."""
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, arr.astype(np.float32))
        return
    peak = float(arr.max())
    write_png(path, arr / peak if peak > 0 else arr)


@dataclass
class Dataset:
    """Posed multi-view images; pixel values are floats in [0, 1]."""

    cameras: List[Camera]
    images: List[np.ndarray]

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError("one image per camera required")
        for cam, img in zip(self.cameras, self.images):
            if img.shape != (cam.height, cam.width, 3):
                raise ValueError(
                    f"image shape {img.shape} does not match camera "
                    f"{cam.width}x{cam.height}")

    def __len__(self) -> int:
        return len(self.cameras)


def write_dataset(dataset: Dataset, out_dir, scene_meta: dict | None = None) -> None:
    """Layout: scene.json, cam_%03d.json, img_%03d.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scene.json", "w") as fh:
        json.dump(scene_meta or {}, fh, indent=2)
        fh.write("\n")
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        write_camera(cam, out / f"cam_{i:03d}.json")
        write_png(out / f"img_{i:03d}.png", img)


def load_dataset(path) -> Dataset:
    root = Path(path)
    cams, imgs = [], []
    for cam_path in sorted(root.glob("cam_*.json")):
        idx = cam_path.stem.split("_")[1]
        img_path = root / f"img_{idx}.png"
        if not img_path.exists():
            raise FileNotFoundError(f"missing image for {cam_path.name}")
        cams.append(read_camera(cam_path))
        imgs.append(read_png(img_path))
    if not cams:
        raise FileNotFoundError(f"no cam_*.json files under {root}")
    return Dataset(cams, imgs)
