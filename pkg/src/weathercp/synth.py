"""Synthetic multi-vehicle LiDAR scenes in the dataset layout.

A flat ground plane with axis-aligned boxes (buildings, parked cars and the
other cooperative vehicles) is ray cast from each vehicle's roof-mounted
sensor. Clouds are written in the sensor frame with all-clear labels, and
poses go to ``poses.json``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import PointCloud, Pose, write_binary, write_pcd

CAR_SIZE = np.array([4.5, 1.8, 1.5])


@dataclass
class SceneConfig:
    n_vehicles: int = 3
    points_per_cloud: int = 20_000
    n_frames: int = 2
    spacing: float = 20.0  # m between consecutive vehicles along the road
    seed: int = 0
    scenario_id: str = "synth_000"
    n_buildings: int = 24
    n_parked: int = 16
    channels: int = 32
    sensor_height: float = 1.8
    max_range: float = 120.0
    speed: float = 10.0  # m/s along +x
    frame_dt: float = 0.1  # s, 10 Hz
    fmt: str = "wvpc"

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ValueError("a cooperative scene needs at least two vehicles")
        if self.fmt not in ("wvpc", "pcd"):
            raise ValueError(f"unknown cloud format {self.fmt!r}")


def _world(cfg: SceneConfig, rng: np.random.Generator):
    """Static boxes as (lo, hi, reflectivity) arrays."""
    length = cfg.spacing * cfg.n_vehicles + 2 * cfg.max_range
    x0 = -cfg.max_range
    lo, hi = [], []
    for _ in range(cfg.n_buildings):
        side = rng.choice([-1.0, 1.0])
        w, d, h = rng.uniform(8, 25), rng.uniform(6, 15), rng.uniform(4, 20)
        x = rng.uniform(x0, x0 + length)
        y = side * rng.uniform(9, 20)
        y_lo = y if side > 0 else y - d
        lo.append([x, y_lo, 0.0])
        hi.append([x + w, y_lo + d, h])
    for _ in range(cfg.n_parked):
        side = rng.choice([-1.0, 1.0])
        x = rng.uniform(x0, x0 + length)
        y = side * 5.5
        lo.append([x, y - CAR_SIZE[1] / 2, 0.0])
        hi.append([x + CAR_SIZE[0], y + CAR_SIZE[1] / 2, CAR_SIZE[2]])
    refl = rng.uniform(0.2, 0.9, len(lo))
    return np.array(lo), np.array(hi), refl


def _cast(origin, dirs, lo, hi, box_refl, ground_refl, max_range):
    """Nearest hit distance, surface normal and reflectivity per ray (inf on miss)."""
    n = len(dirs)
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    refl = np.zeros(n)

    down = dirs[:, 2] < 0
    t_ground = np.where(down, -origin[2] / np.where(down, dirs[:, 2], -1.0), np.inf)
    hit = t_ground < t_best
    t_best[hit] = t_ground[hit]
    normal[hit] = [0.0, 0.0, 1.0]
    refl[hit] = ground_refl

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for b in range(len(lo)):
            t1 = (lo[b] - origin) * inv
            t2 = (hi[b] - origin) * inv
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            t_near = np.nanmax(tmin, axis=1)
            t_far = np.nanmin(tmax, axis=1)
            box_hit = (t_near <= t_far) & (t_far > 0) & (t_near > 0) & (t_near < t_best)
            if not box_hit.any():
                continue
            t_best[box_hit] = t_near[box_hit]
            axis = np.nanargmax(tmin[box_hit], axis=1)
            nrm = np.zeros((int(box_hit.sum()), 3))
            nrm[np.arange(len(axis)), axis] = -np.sign(dirs[box_hit, axis])
            normal[box_hit] = nrm
            refl[box_hit] = box_refl[b]
    t_best[t_best > max_range] = np.inf
    return t_best, normal, refl


def _scan(pose: Pose, cfg: SceneConfig, boxes, refl_boxes, ground_refl, rng: np.random.Generator) -> PointCloud:
    lo, hi = boxes
    elev = np.deg2rad(np.linspace(-25.0, 3.0, cfg.channels))
    n_az = max(64, int(np.ceil(2.0 * cfg.points_per_cloud / cfg.channels)))
    while True:
        az = 2 * np.pi * np.arange(n_az) / n_az
        e, a = np.meshgrid(elev, az, indexing="ij")
        local = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
        dirs = local @ pose.matrix().T
        t, normal, refl = _cast(pose.translation, dirs, lo, hi, refl_boxes, ground_refl, cfg.max_range)
        ok = np.isfinite(t)
        if ok.sum() >= cfg.points_per_cloud or n_az > 1 << 16:
            break
        n_az *= 2
    idx = np.flatnonzero(ok)
    if len(idx) > cfg.points_per_cloud:
        idx = np.sort(rng.choice(idx, cfg.points_per_cloud, replace=False))
    cos_inc = np.abs(np.einsum("ij,ij->i", dirs[idx], normal[idx]))
    intensity = np.clip(refl[idx] * np.sqrt(cos_inc) + rng.normal(0, 0.02, len(idx)), 0.0, 1.0)
    points_local = local[idx] * t[idx, None]
    return PointCloud(points_local, intensity, np.zeros(len(idx), np.uint8))


def vehicle_poses(cfg: SceneConfig, frame: int, rng_lanes) -> dict:
    poses = {}
    for v in range(cfg.n_vehicles):
        x = v * cfg.spacing + frame * cfg.speed * cfg.frame_dt
        y = rng_lanes[v]
        poses[f"v{v}"] = Pose.from_yaw([x, y, cfg.sensor_height], 0.0, f"v{v}")
    return poses


def gen_synthetic_scene(root, cfg: SceneConfig = SceneConfig()) -> Path:
    """Write one scenario under ``root/cfg.scenario_id`` and return its directory."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    lo, hi, refl = _world(cfg, rng)
    ground_refl = float(rng.uniform(0.15, 0.3))
    lanes = rng.choice([-1.75, 1.75], cfg.n_vehicles)

    out = Path(root) / cfg.scenario_id
    out.mkdir(parents=True, exist_ok=True)
    frames = {}
    for f in range(cfg.n_frames):
        frame_id = f"{f:06d}"
        poses = vehicle_poses(cfg, f, lanes)
        (out / frame_id).mkdir(exist_ok=True)
        for vid, pose in poses.items():
            # the other vehicles are obstacles for this sensor
            others = [p for k, p in poses.items() if k != vid]
            car_lo = np.array([p.translation - [CAR_SIZE[0] / 2, CAR_SIZE[1] / 2, cfg.sensor_height] for p in others])
            car_hi = car_lo + CAR_SIZE
            boxes = (np.vstack([lo, car_lo]), np.vstack([hi, car_hi]))
            refl_all = np.concatenate([refl, np.full(len(others), 0.7)])
            cloud = _scan(pose, cfg, boxes, refl_all, ground_refl, rng)
            cloud = PointCloud(cloud.xyz, cloud.intensity, cloud.labels, frame_id, vid, f * cfg.frame_dt)
            path = out / frame_id / f"{vid}.{cfg.fmt}"
            (write_binary if cfg.fmt == "wvpc" else write_pcd)(cloud, path)
        frames[frame_id] = [p.to_json() for p in poses.values()]
    meta = {
        "scenario_id": cfg.scenario_id,
        "cooperative": sorted(poses),
        "frames": frames,
        "generator": asdict(cfg),
    }
    (out / "poses.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out
