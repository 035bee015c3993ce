"""Voxel-level noise classifiers and per-class metrics.

A denoiser maps a labeled-or-not voxel grid (plus the cloud it was built
from) to one prediction per voxel, 1 = noise. Two plugins are provided: an
oracle that replays ground truth with optional label flips, and a heuristic
that marks dim, isolated voxels as noise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .core import NoiseLabel, PointCloud
from .voxel import SparseVoxelGrid, voxelize
from .weather import RngStream


class Denoiser(Protocol):
    name: str

    def classify(self, grid: SparseVoxelGrid, cloud: Optional[PointCloud] = None, rng: Optional[RngStream] = None) -> np.ndarray:
        ...


@dataclass(frozen=True)
class OracleDenoiser:
    """Ground truth with independent per-class flips.

    ``flip_noise`` is the chance a noise voxel is predicted clean,
    ``flip_no_noise`` the chance a clean voxel is predicted noise.
    """

    flip_noise: float = 0.0
    flip_no_noise: float = 0.0
    name: str = "oracle"

    def __post_init__(self):
        for p in (self.flip_noise, self.flip_no_noise):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"flip rate {p} outside [0, 1]")

    def classify(self, grid, cloud=None, rng=None):
        if grid.labels is None:
            raise ValueError("oracle denoiser needs a labeled grid")
        truth = grid.labels.astype(np.uint8)
        if self.flip_noise == 0 and self.flip_no_noise == 0:
            return truth.copy()
        u = (rng or RngStream()).generator().random(len(truth))
        rate = np.where(truth == NoiseLabel.NOISE, self.flip_noise, self.flip_no_noise)
        return np.where(u < rate, 1 - truth, truth).astype(np.uint8)


def oracle_denoiser(grid: SparseVoxelGrid, flip_noise: float = 0.0, flip_no_noise: float = 0.0, rng: Optional[RngStream] = None) -> np.ndarray:
    return OracleDenoiser(flip_noise, flip_no_noise).classify(grid, rng=rng)


def neighbor_counts(grid: SparseVoxelGrid, radius: int = 1) -> np.ndarray:
    """Occupied voxels in the (2r+1)^3 - 1 neighbourhood of every voxel."""
    keys = grid.keys
    dims = np.array(grid.spec.dims)
    counts = np.zeros(len(grid), dtype=np.int64)
    if len(grid) == 0:
        return counts
    span = range(-radius, radius + 1)
    for off in itertools.product(span, span, span):
        if off == (0, 0, 0):
            continue
        nb = grid.coords + np.array(off)
        valid = ((nb >= 0) & (nb < dims)).all(axis=1)
        nk = grid.spec.linear(nb[valid])
        pos = np.searchsorted(keys, nk)
        pos = np.minimum(pos, len(keys) - 1)
        counts[valid] += keys[pos] == nk
    return counts


def voxel_mean_intensity(grid: SparseVoxelGrid, cloud: PointCloud) -> np.ndarray:
    rebuilt, inverse = voxelize(cloud, grid.spec, return_inverse=True)
    if not np.array_equal(rebuilt.coords, grid.coords):
        raise ValueError("grid was not built from this cloud")
    inside = inverse >= 0
    total = np.bincount(inverse[inside], minlength=len(grid))
    summed = np.bincount(inverse[inside], weights=cloud.intensity[inside], minlength=len(grid))
    return summed / np.maximum(total, 1)


@dataclass(frozen=True)
class HeuristicDenoiser:
    """Noise iff the voxel is dim and has few occupied neighbours."""

    intensity_threshold: float = 0.1
    neighbor_radius: int = 1
    min_neighbors: int = 2
    name: str = "heuristic"

    def classify(self, grid, cloud=None, rng=None):
        if cloud is None:
            raise ValueError("heuristic denoiser needs the source cloud for intensities")
        dim = voxel_mean_intensity(grid, cloud) < self.intensity_threshold
        sparse = neighbor_counts(grid, self.neighbor_radius) < self.min_neighbors
        return (dim & sparse).astype(np.uint8)


def heuristic_denoiser(grid, cloud, intensity_threshold=0.1, neighbor_radius=1, min_neighbors=2) -> np.ndarray:
    return HeuristicDenoiser(intensity_threshold, neighbor_radius, min_neighbors).classify(grid, cloud)


def make_denoiser(name: str, **kwargs) -> Denoiser:
    if name == "oracle":
        return OracleDenoiser(**kwargs)
    if name == "heuristic":
        return HeuristicDenoiser(**kwargs)
    raise ValueError(f"unknown denoiser {name!r}")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with noise as the positive class."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class DenoiseMetrics:
    """Per-class accuracy (class recall) and F1 in percent; None where the class is absent."""

    accuracy_noise: Optional[float]
    accuracy_no_noise: Optional[float]
    f1_noise: Optional[float]
    f1_no_noise: Optional[float]

    def to_json(self) -> dict:
        return {
            "accuracy_noise": self.accuracy_noise,
            "accuracy_no_noise": self.accuracy_no_noise,
            "f1_noise": self.f1_noise,
            "f1_no_noise": self.f1_no_noise,
        }


def confusion(predictions, truth) -> ConfusionMatrix:
    p = np.asarray(predictions).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {t.shape} labels")
    return ConfusionMatrix(
        tp=int((p & t).sum()), fp=int((p & ~t).sum()), tn=int((~p & ~t).sum()), fn=int((~p & t).sum())
    )


def metrics(cm: ConfusionMatrix) -> DenoiseMetrics:
    acc_n = f1_n = acc_c = f1_c = None
    if cm.tp + cm.fn:
        acc_n = 100.0 * cm.tp / (cm.tp + cm.fn)
        f1_n = 100.0 * 2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn)
    if cm.tn + cm.fp:
        acc_c = 100.0 * cm.tn / (cm.tn + cm.fp)
        f1_c = 100.0 * 2 * cm.tn / (2 * cm.tn + cm.fn + cm.fp)
    return DenoiseMetrics(acc_n, acc_c, f1_n, f1_c)


def evaluate(predictions, truth) -> tuple[ConfusionMatrix, DenoiseMetrics]:
    cm = confusion(predictions, truth)
    return cm, metrics(cm)
