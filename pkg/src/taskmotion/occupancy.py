"""Single-view conservative volumetric reconstruction.

Pipeline: depth back-projection -> voxelization -> 3D morphological closing
-> gravity-axis vertical support completion. Grids are indexed [u, v, w]
with w the up axis and index 0 at the bottom; metric position of a voxel is
origin + r * index (cell corner; centers sit at +r/2).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, ScenarioParseError
from .geometry import Pose7, Transform

DEFAULT_RESOLUTION = 0.01   # m, voxel edge
DEFAULT_KERNEL_SIDE = 3

# floor bias so that index -> metric -> index round trips exactly despite
# float cancellation in (origin + r*u) - origin
_INDEX_EPS = 1e-9


def metric_to_index(points, origin, resolution: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.floor((pts - np.asarray(origin, dtype=float)) / resolution + _INDEX_EPS).astype(int)


@dataclass
class DepthImage:
    depth: np.ndarray          # H x W, meters; 0 = no return
    fx: float
    fy: float
    cx: float
    cy: float
    camera_pose: Pose7 = field(default_factory=Pose7.identity)

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.ndim != 2:
            raise InvalidArgument("depth must be H x W")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise InvalidArgument("depth values must be finite and >= 0")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgument("fx, fy must be positive")


@dataclass
class PointCloud:
    points: np.ndarray         # N x 3, base frame

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InvalidArgument("point cloud must be finite")


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray      # bool, shape (H, W, D); axis 2 is up

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        if self.resolution <= 0:
            raise InvalidArgument("resolution must be positive")
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise InvalidArgument("occupancy must be a nonempty 3D array")

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    def index_of(self, point) -> np.ndarray:
        return metric_to_index(point, self.origin, self.resolution)

    def in_bounds(self, idx) -> bool:
        idx = np.asarray(idx)
        return bool(np.all(idx >= 0) and np.all(idx < np.array(self.dims)))

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def count(self) -> int:
        return int(self.occupancy.sum())


@dataclass(frozen=True)
class Kernel:
    side: int = DEFAULT_KERNEL_SIDE

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise InvalidArgument("kernel side must be odd and >= 1")

    def structure(self) -> np.ndarray:
        return np.ones((self.side,) * 3, dtype=bool)


def backproject(img: DepthImage) -> PointCloud:
    """Pinhole back-projection of every returned pixel into the base frame."""
    h, w = img.depth.shape
    vs, us = np.nonzero(img.depth > 0)
    d = img.depth[vs, us]
    x = (us - img.cx) * d / img.fx
    y = (vs - img.cy) * d / img.fy
    cam_pts = np.stack([x, y, d], axis=1)
    t = Transform.from_pose(img.camera_pose)
    return PointCloud(cam_pts @ t.rotation.T + t.translation)


def voxelize(cloud: PointCloud, origin, resolution: float, dims) -> VoxelGrid:
    """Mark every cell containing at least one point; out-of-bounds dropped."""
    if resolution <= 0:
        raise InvalidArgument("resolution must be positive")
    dims = tuple(int(v) for v in dims)
    occ = np.zeros(dims, dtype=bool)
    if len(cloud.points):
        idx = metric_to_index(cloud.points, origin, resolution)
        keep = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
        idx = idx[keep]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin=np.asarray(origin, dtype=float), resolution=resolution, occupancy=occ)


def morph_close(grid: VoxelGrid, kernel: Kernel = Kernel()) -> VoxelGrid:
    """Dilation then erosion with a cubic kernel.

    Out-of-grid is free for the dilation and occupied for the erosion, so
    closing never shrinks solids touching the boundary.
    """
    st = kernel.structure()
    dilated = ndimage.binary_dilation(grid.occupancy, structure=st, border_value=0)
    closed = ndimage.binary_erosion(dilated, structure=st, border_value=1)
    return VoxelGrid(origin=grid.origin, resolution=grid.resolution, occupancy=closed)


def conservative_complete(grid: VoxelGrid) -> VoxelGrid:
    """Vertical support completion: a voxel is occupied iff anything at the
    same column sits at equal or greater height."""
    flipped = grid.occupancy[:, :, ::-1]
    completed = np.logical_or.accumulate(flipped, axis=2)[:, :, ::-1]
    return VoxelGrid(origin=grid.origin, resolution=grid.resolution, occupancy=completed)


def build_conservative_map(img: DepthImage, origin, resolution: float, dims,
                           kernel: Kernel = Kernel()):
    """Full single-view pipeline; returns (m_init, m_closed, m_final)."""
    cloud = backproject(img)
    m_init = voxelize(cloud, origin, resolution, dims)
    m_closed = morph_close(m_init, kernel)
    m_final = conservative_complete(m_closed)
    return m_init, m_closed, m_final


# --- dump format: length-prefixed JSON header + RLE payload ----------------
#
# Runs alternate free/occupied over the flattened (C-order) bitset, starting
# with free, each encoded as a big-endian uint32.

_MAGIC = b"TMGRID1\n"


def save_grid(grid: VoxelGrid, path) -> None:
    header = json.dumps(
        {
            "origin": [float(v) for v in grid.origin],
            "resolution": grid.resolution,
            "dims": list(grid.dims),
        },
        sort_keys=True,
    ).encode()
    flat = grid.occupancy.reshape(-1)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate([[0], runs])   # streams always start free
    runs = runs.astype(np.uint32).tolist()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(">I", len(header)))
        fh.write(header)
        fh.write(struct.pack(">I", len(runs)))
        fh.write(struct.pack(f">{len(runs)}I", *runs))


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ScenarioParseError("bad grid magic", str(path))
        (hlen,) = struct.unpack(">I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        (nruns,) = struct.unpack(">I", fh.read(4))
        runs = struct.unpack(f">{nruns}I", fh.read(4 * nruns))
    dims = tuple(header["dims"])
    total = int(np.prod(dims))
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, np.asarray(runs, dtype=np.int64))
    if flat.size != total:
        raise ScenarioParseError(f"RLE length {flat.size} != voxel count {total}", str(path))
    return VoxelGrid(
        origin=np.array(header["origin"]),
        resolution=header["resolution"],
        occupancy=flat.reshape(dims),
    )
