"""Coordinate-only sparse voxel grids.

Coordinates are kept as an ``(N, 3)`` int64 array sorted lexicographically
by (ix, iy, iz); that order is also the wire order and lets fusion run as a
sorted merge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import NoiseLabel, PointCloud


@dataclass(frozen=True, eq=False)
class GridSpec:
    origin: np.ndarray = field(default_factory=lambda: np.array([-140.0, -40.0, -3.0]))
    voxel_size: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.10]))
    dims: tuple = (5600, 1600, 40)

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        # voxel size travels as f32 on the wire; keep the shortest decimal of that f32
        size = np.array([float(str(v)) for v in np.asarray(self.voxel_size, dtype=np.float32).reshape(3)])
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if not (size > 0).all():
            raise ValueError("voxel size must be positive")
        origin.setflags(write=False)
        size.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", dims)

    def __eq__(self, other):
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            np.array_equal(self.origin, other.origin)
            and np.array_equal(self.voxel_size, other.voxel_size)
            and self.dims == other.dims
        )

    def __hash__(self):
        return hash((tuple(self.origin), tuple(self.voxel_size), self.dims))

    @property
    def extent(self) -> np.ndarray:
        return self.voxel_size * np.array(self.dims)

    def linear(self, coords: np.ndarray) -> np.ndarray:
        """Row-major linear index; monotone in lexicographic coordinate order."""
        c = np.asarray(coords, dtype=np.int64)
        _, dy, dz = self.dims
        return (c[:, 0] * dy + c[:, 1]) * dz + c[:, 2]

    def unlinear(self, keys: np.ndarray) -> np.ndarray:
        _, dy, dz = self.dims
        keys = np.asarray(keys, dtype=np.int64)
        return np.stack([keys // (dy * dz), (keys // dz) % dy, keys % dz], axis=1)

    def to_json(self) -> dict:
        return {"origin": self.origin.tolist(), "voxel_size": self.voxel_size.tolist(), "dims": list(self.dims)}

    @classmethod
    def from_json(cls, d: dict) -> "GridSpec":
        return cls(d["origin"], d["voxel_size"], tuple(d["dims"]))


@dataclass(frozen=True, eq=False)
class SparseVoxelGrid:
    spec: GridSpec
    coords: np.ndarray
    labels: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if len(coords):
            if coords.min() < 0 or (coords >= np.array(self.spec.dims)).any():
                raise ValueError("voxel coordinates outside grid dims")
            keys = self.spec.linear(coords)
            if (np.diff(keys) <= 0).any():
                raise ValueError("voxel coordinates must be strictly sorted and unique")
        labels, features = self.labels, self.features
        if labels is not None:
            labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
            if len(labels) != len(coords):
                raise ValueError(f"{len(coords)} voxels but {len(labels)} labels")
        if features is not None:
            features = np.asarray(features)
            if features.ndim != 2 or len(features) != len(coords):
                raise ValueError("features must be an (N, C) array matching the voxel count")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, SparseVoxelGrid):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.spec == other.spec
            and np.array_equal(self.coords, other.coords)
            and same(self.labels, other.labels)
            and same(self.features, other.features)
        )

    @property
    def keys(self) -> np.ndarray:
        return self.spec.linear(self.coords)

    @property
    def noise_count(self) -> int:
        if self.labels is None:
            raise ValueError("grid has no labels")
        return int(self.labels.sum())


def point_voxel_index(cloud: PointCloud, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-point voxel coordinates and the in-extent mask."""
    idx = np.floor((cloud.xyz.astype(np.float64) - spec.origin) / spec.voxel_size)
    inside = ((idx >= 0) & (idx < np.array(spec.dims))).all(axis=1)
    return idx.astype(np.int64), inside


def voxelize(cloud: PointCloud, spec: GridSpec = GridSpec(), return_inverse: bool = False):
    """Occupied voxels of ``cloud``; labels by strict majority, ties go to no-noise.

    With ``return_inverse`` also returns, per point, the index of its voxel
    in the output (-1 for points outside the grid).
    """
    idx, inside = point_voxel_index(cloud, spec)
    keys = spec.linear(idx[inside])
    uniq, inv = np.unique(keys, return_inverse=True)
    labels = None
    if cloud.labels is not None:
        total = np.bincount(inv, minlength=len(uniq))
        noisy = np.bincount(inv, weights=cloud.labels[inside], minlength=len(uniq))
        labels = np.where(2 * noisy > total, NoiseLabel.NOISE, NoiseLabel.NO_NOISE).astype(np.uint8)
    grid = SparseVoxelGrid(spec, spec.unlinear(uniq), labels)
    if not return_inverse:
        return grid
    point_to_voxel = np.full(len(cloud), -1, dtype=np.int64)
    point_to_voxel[inside] = inv
    return grid, point_to_voxel


def center_features(grid: SparseVoxelGrid) -> np.ndarray:
    """Voxel center points, the only per-voxel feature a receiver can rebuild."""
    return grid.spec.origin + (grid.coords + 0.5) * grid.spec.voxel_size


def with_center_features(grid: SparseVoxelGrid) -> SparseVoxelGrid:
    return SparseVoxelGrid(grid.spec, grid.coords, grid.labels, center_features(grid))


def scatter_fuse(a: SparseVoxelGrid, b: SparseVoxelGrid) -> SparseVoxelGrid:
    """Union of two feature grids; shared voxels take the element-wise maximum.

    Labels are not carried into the fused grid.
    """
    if a.spec != b.spec:
        raise ValueError("cannot fuse grids with different specs")
    if a.features is None or b.features is None:
        raise ValueError("scatter_fuse needs feature-bearing grids")
    if a.features.shape[1] != b.features.shape[1]:
        raise ValueError(f"feature width mismatch: {a.features.shape[1]} vs {b.features.shape[1]}")
    keys = np.concatenate([a.keys, b.keys])
    feats = np.concatenate([a.features, b.features])
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    fused = feats[first].copy()
    np.maximum.at(fused, inv, feats)
    return SparseVoxelGrid(a.spec, a.spec.unlinear(uniq), None, fused)


def apply_mask(grid: SparseVoxelGrid, predicted) -> SparseVoxelGrid:
    """Keep only the voxels predicted as no-noise."""
    predicted = np.asarray(predicted)
    if predicted.shape != (len(grid),):
        raise ValueError(f"{len(grid)} voxels but {predicted.shape} predictions")
    keep = predicted == NoiseLabel.NO_NOISE
    return SparseVoxelGrid(
        grid.spec,
        grid.coords[keep],
        None if grid.labels is None else grid.labels[keep],
        None if grid.features is None else grid.features[keep],
    )
