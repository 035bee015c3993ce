"""Rain, snow and fog augmentation of clear-weather LiDAR clouds.

Rain and snow share one ray-tracing procedure. Each point is treated as the
return of a diverging beam, discretised into a cone of rays; the volume
around the beam is filled with spherical particles by a Poisson process and
the fraction of rays blocked by particles decides whether the point is kept,
moved onto a particle, or dropped. Particles are instantiated per beam
corridor rather than for the whole field of view, which is what keeps a
dense rain frame tractable.

Fog uses a closed-form transmission model instead of ray tracing.

Every simulator returns a labeled cloud: surviving points first (input
order, label 0), then relocated points (input order, label 1).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numba import njit
from scipy import special

from .core import NoiseLabel, PointCloud

# ring layout as (radius fraction of the beam cross-section, ray count)
DEFAULT_RINGS = ((0.5, 6), (1.0, 12))

_LOGNORMAL = 0
_EXPONENTIAL = 1


class DoubleAugmentationError(ValueError):
    pass


# -- randomness ------------------------------------------------------------------


def _key_word(part) -> int:
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream named by a master seed and a key path.

    Typical keys are ``(scenario_id, vehicle_id, frame_id)``; per-beam seeds
    are derived from the stream by beam index, so the draws for one point do
    not depend on how many other points the cloud holds.
    """

    seed: int = 0
    key: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(parts))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=tuple(_key_word(p) for p in self.key))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def beam_seeds(self, n: int) -> np.ndarray:
        # word i of generate_state depends only on i, not on n
        return self.seed_sequence().generate_state(max(n, 1), dtype=np.uint32)[:n]


# -- parameters ------------------------------------------------------------------


@dataclass(frozen=True)
class RainParams:
    rate: float  # mm/h
    drop_density: float  # drops per m^3

    def __post_init__(self):
        if self.rate < 0 or self.drop_density < 0:
            raise ValueError("rain rate and drop density must be non-negative")


@dataclass(frozen=True)
class SnowParams:
    rate: float  # mm/h, water equivalent
    flake_density: float  # flakes per m^3
    scale: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or self.flake_density < 0:
            raise ValueError("snow rate and flake density must be non-negative")
        if not 1.0 <= self.scale <= 5.0:
            raise ValueError(f"snow scale {self.scale} outside [1, 5]")


@dataclass(frozen=True)
class FogParams:
    viewing_distance: float  # m

    def __post_init__(self):
        if not self.viewing_distance > 0:
            raise ValueError("viewing distance must be positive")


def _check_unit_range(name, lo_hi):
    lo, hi = lo_hi
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1, got {lo_hi}")


@dataclass(frozen=True)
class BeamModel:
    divergence: float = 3e-3  # full angle, rad
    ring_layout: tuple = DEFAULT_RINGS

    def __post_init__(self):
        if self.divergence < 0:
            raise ValueError("divergence must be non-negative")
        layout = tuple((float(f), int(n)) for f, n in self.ring_layout)
        for frac, count in layout:
            if not 0.0 < frac <= 1.0 or count < 1:
                raise ValueError(f"bad ring ({frac}, {count})")
        object.__setattr__(self, "ring_layout", layout)

    @property
    def rays_per_beam(self) -> int:
        return 1 + sum(n for _, n in self.ring_layout)

    @property
    def tan_half(self) -> float:
        return math.tan(self.divergence / 2)

    def local_directions(self) -> np.ndarray:
        """Unit ray directions in the beam frame, whose axis is +z."""
        offsets = [(0.0, 0.0)]
        for frac, count in self.ring_layout:
            phi = 2 * np.pi * np.arange(count) / count
            offsets += [(frac * math.cos(p), frac * math.sin(p)) for p in phi]
        d = np.array([(ox * self.tan_half, oy * self.tan_half, 1.0) for ox, oy in offsets])
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class RainConfig:
    theta_mod: float = 0.15
    theta_scatter: float = 0.8
    max_drop_diameter: float = 6.0  # mm
    relocated_intensity_range: tuple = (0.0, 0.1)
    # Feingold-Levin: geometric mean diameter = coeff * rate**exp (mm)
    median_coeff: float = 0.72
    median_exp: float = 0.23
    geometric_sd: float = 1.43

    def __post_init__(self):
        _check_unit_range("thresholds", (0.0, self.theta_mod))
        _check_unit_range("thresholds", (0.0, self.theta_scatter))
        _check_unit_range("relocated_intensity_range", self.relocated_intensity_range)
        object.__setattr__(self, "relocated_intensity_range", tuple(self.relocated_intensity_range))


@dataclass(frozen=True)
class SnowConfig:
    theta_mod: float = 0.10
    theta_scatter: float = 0.7
    relocated_intensity_range: tuple = (0.0, 0.1)
    # Sekhon-Srivastava slope: coeff * rate**exp (1/mm), molten diameters
    slope_coeff: float = 2.29
    slope_exp: float = -0.45
    max_molten_diameter: float = 10.0  # mm, before scaling

    def __post_init__(self):
        _check_unit_range("thresholds", (0.0, self.theta_mod))
        _check_unit_range("thresholds", (0.0, self.theta_scatter))
        _check_unit_range("relocated_intensity_range", self.relocated_intensity_range)
        object.__setattr__(self, "relocated_intensity_range", tuple(self.relocated_intensity_range))


@dataclass(frozen=True)
class FogConfig:
    detect_threshold: float = 0.05
    scatter_prob: float = 0.5
    scatter_mean_range: float = 15.0  # m
    min_range: float = 1.5  # m
    noise_intensity_range: tuple = (0.0, 0.05)
    contrast_constant: float = 3.912  # Koschmieder: -ln(0.02), alpha = constant / visibility

    def __post_init__(self):
        _check_unit_range("noise_intensity_range", self.noise_intensity_range)
        if not 0.0 <= self.scatter_prob <= 1.0:
            raise ValueError("scatter_prob must lie in [0, 1]")
        if self.scatter_mean_range <= 0 or self.min_range < 0:
            raise ValueError("scatter ranges must be positive")
        object.__setattr__(self, "noise_intensity_range", tuple(self.noise_intensity_range))


# -- particle size distributions ---------------------------------------------------


@dataclass(frozen=True)
class DiameterSampler:
    """Particle diameter law in mm.

    ``kind`` is lognormal (``a`` = log-median, ``b`` = log-sd) or exponential
    (``a`` = mean). Draws above ``cap`` are rejected and redrawn; accepted
    draws are multiplied by ``scale``.
    """

    kind: int
    a: float
    b: float
    cap: float
    scale: float = 1.0

    @property
    def max_diameter(self) -> float:
        return self.cap * self.scale

    def moment(self, k: int) -> float:
        """E[D**k] in mm**k for the capped, scaled law."""
        if self.kind == _LOGNORMAL:
            mu, sd = self.a, self.b
            z = (math.log(self.cap) - mu) / sd
            raw = math.exp(k * mu + 0.5 * (k * sd) ** 2) * special.ndtr(z - k * sd) / special.ndtr(z)
        else:
            x = self.cap / self.a
            raw = self.a**k * math.factorial(k) * special.gammainc(k + 1, x) / special.gammainc(1, x)
        return float(raw) * self.scale**k

    def radius_moment(self, k: int) -> float:
        """E[r**k] in m**k, r being the particle radius."""
        return self.moment(k) * (0.5e-3) ** k

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        seed = int(rng.beam_seeds(1)[0])
        return _draw_many(seed, size, self.kind, self.a, self.b, self.cap, self.scale)


def rain_sampler(params: RainParams, cfg: RainConfig = RainConfig()) -> DiameterSampler:
    if params.rate <= 0:
        raise ValueError(f"rain rate must be positive, got {params.rate}")
    median = cfg.median_coeff * params.rate**cfg.median_exp
    return DiameterSampler(_LOGNORMAL, math.log(median), math.log(cfg.geometric_sd), cfg.max_drop_diameter)


def snow_slope(rate: float, cfg: SnowConfig = SnowConfig()) -> float:
    """Exponential size-distribution slope in 1/mm."""
    return cfg.slope_coeff * rate**cfg.slope_exp


def snow_sampler(params: SnowParams, cfg: SnowConfig = SnowConfig()) -> DiameterSampler:
    if params.rate <= 0:
        raise ValueError(f"snow rate must be positive, got {params.rate}")
    return DiameterSampler(_EXPONENTIAL, 1.0 / snow_slope(params.rate, cfg), 0.0, cfg.max_molten_diameter, params.scale)


def sample_raindrop_diameter(params: RainParams, rng: RngStream, size: int = 1, cfg: RainConfig = RainConfig()) -> np.ndarray:
    return rain_sampler(params, cfg).sample(rng, size)


def sample_snowflake_diameter(params: SnowParams, rng: RngStream, size: int = 1, cfg: SnowConfig = SnowConfig()) -> np.ndarray:
    return snow_sampler(params, cfg).sample(rng, size)


@njit(cache=True)
def _draw_one(kind, a, b, cap, scale):
    while True:
        if kind == 0:
            d = np.random.lognormal(a, b)
        else:
            d = np.random.exponential(a)
        if d <= cap:
            return d * scale


@njit(cache=True)
def _draw_many(seed, n, kind, a, b, cap, scale):
    np.random.seed(seed)
    out = np.empty(n)
    for i in range(n):
        out[i] = _draw_one(kind, a, b, cap, scale)
    return out


# -- geometry ----------------------------------------------------------------------


@njit(cache=True)
def _basis(d):
    """Orthonormal (u, v) completing unit ``d`` to a right-handed frame."""
    if abs(d[0]) < 0.9:
        h = np.array([1.0, 0.0, 0.0])
    else:
        h = np.array([0.0, 1.0, 0.0])
    u = h - (h[0] * d[0] + h[1] * d[1] + h[2] * d[2]) * d
    u /= math.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    v = np.array([d[1] * u[2] - d[2] * u[1], d[2] * u[0] - d[0] * u[2], d[0] * u[1] - d[1] * u[0]])
    return u, v


@njit(cache=True)
def _ray_sphere(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    # perpendicular form avoids cancellation in b^2 - (|oc|^2 - r^2)
    px, py, pz = cx - ox, cy - oy, cz - oz
    b = px * dx + py * dy + pz * dz
    qx, qy, qz = px - b * dx, py - b * dy, pz - b * dz
    disc = r * r - (qx * qx + qy * qy + qz * qz)
    if disc < 0.0:
        return -1.0
    s = math.sqrt(disc)
    # an origin on the surface can leave a root a few ulps below zero
    tol = -1e-12 * (abs(b) + r)
    t0 = b - s
    if t0 >= tol:
        return max(t0, 0.0)
    t1 = b + s
    if t1 >= tol:
        return max(t1, 0.0)
    return -1.0


def intersect_ray_sphere(origin, direction, center, radius) -> Optional[float]:
    """Smallest non-negative ray parameter hitting the sphere, or None."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    o, d, c = (np.asarray(v, dtype=np.float64) for v in (origin, direction, center))
    t = _ray_sphere(o[0], o[1], o[2], d[0], d[1], d[2], c[0], c[1], c[2], float(radius))
    return None if t < 0 else float(t)


class BeamRays(NamedTuple):
    directions: np.ndarray  # (R, 3) unit vectors from the sensor origin
    endpoints: np.ndarray  # (R, 3) where each ray pierces the cross-section disk at `range`


def make_beam_rays(direction, range_: float, beam: BeamModel = BeamModel()) -> BeamRays:
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("zero direction vector")
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, got norm {norm}")
    u, v = _basis(d / norm)
    frame = np.stack([u, v, d / norm], axis=1)
    local = beam.local_directions()
    dirs = local @ frame.T
    ends = dirs * (range_ / local[:, 2])[:, None]
    return BeamRays(dirs, ends)


def corridor_radius(range_: float, beam: BeamModel, max_particle_diameter: float) -> float:
    """Radius of the cylinder whose particles can touch the beam, in m."""
    return range_ * beam.tan_half + max_particle_diameter * 1e-3 / 2


@njit(cache=True)
def _fill_corridor(length, radius, density, kind, a, b, cap, scale):
    """Poisson particle field in a cylinder along +z; returns (n, 4) x, y, z, radius in m."""
    n = np.random.poisson(density * math.pi * radius * radius * length)
    out = np.empty((n, 4))
    for k in range(n):
        rho = radius * math.sqrt(np.random.random())
        ang = 2.0 * math.pi * np.random.random()
        out[k, 0] = rho * math.cos(ang)
        out[k, 1] = rho * math.sin(ang)
        out[k, 2] = length * np.random.random()
        out[k, 3] = _draw_one(kind, a, b, cap, scale) * 0.5e-3
    return out


@njit(cache=True)
def _fill_many(seed, trials, length, radius, density, kind, a, b, cap, scale):
    np.random.seed(seed)
    counts = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        counts[i] = _fill_corridor(length, radius, density, kind, a, b, cap, scale).shape[0]
    return counts


def populate_corridor(length: float, radius: float, density: float, sampler: DiameterSampler, rng: RngStream) -> np.ndarray:
    """Spherical particles uniform in a cylinder of ``radius`` around the +z axis from 0 to ``length``.

    Returns an ``(n, 4)`` array of centers and radii in meters.
    """
    if min(length, radius, density) < 0:
        raise ValueError("corridor arguments must be non-negative")
    return _seeded_corridor(int(rng.beam_seeds(1)[0]), length, radius, density, sampler)


def _seeded_corridor(seed, length, radius, density, s: DiameterSampler) -> np.ndarray:
    return _corridor_with_seed(seed, float(length), float(radius), float(density), s.kind, s.a, s.b, s.cap, s.scale)


@njit(cache=True)
def _corridor_with_seed(seed, length, radius, density, kind, a, b, cap, scale):
    np.random.seed(seed)
    return _fill_corridor(length, radius, density, kind, a, b, cap, scale)


def corridor_counts(length, radius, density, sampler: DiameterSampler, rng: RngStream, trials: int) -> np.ndarray:
    """Particle counts of ``trials`` independent corridors (for statistics)."""
    s = sampler
    return _fill_many(int(rng.beam_seeds(1)[0]), trials, float(length), float(radius), float(density), s.kind, s.a, s.b, s.cap, s.scale)


# -- rain / snow -------------------------------------------------------------------

KEEP, RELOCATE, DELETE = 0, 1, 2


@njit(cache=True)
def _trace_beam(particles, rays, target):
    """Per-ray hit flags and per-particle ray counts for one beam."""
    n_rays = rays.shape[0]
    n = particles.shape[0]
    ray_hit = np.zeros(n_rays, dtype=np.bool_)
    per_particle = np.zeros(n, dtype=np.int64)
    tan_max = 0.0
    for j in range(n_rays):
        t = math.sqrt(rays[j, 0] ** 2 + rays[j, 1] ** 2) / rays[j, 2]
        if t > tan_max:
            tan_max = t
    for k in range(n):
        x, y, z, r = particles[k, 0], particles[k, 1], particles[k, 2], particles[k, 3]
        if math.sqrt(x * x + y * y) - r > tan_max * (z + r) + 1e-12:
            continue
        for j in range(n_rays):
            t = _ray_sphere(0.0, 0.0, 0.0, rays[j, 0], rays[j, 1], rays[j, 2], x, y, z, r)
            if t >= 0.0 and t * rays[j, 2] <= target:
                ray_hit[j] = True
                per_particle[k] += 1
    return ray_hit, per_particle


@njit(cache=True)
def _draw_biased(kind, a, b, cap, scale, k):
    """Diameter drawn from the law re-weighted by D**k (k in 0, 1, 2), capped."""
    while True:
        if kind == 0:
            d = np.random.lognormal(a + k * b * b, b)
        else:
            d = np.random.gamma(k + 1.0, a)
        if d <= cap:
            return d * scale


@njit(cache=True)
def _fill_cone(length, tan_half, density, r1, r2, kind, a, b, cap, scale):
    """Particles whose sphere can reach the beam cone, radius-aware.

    A particle of radius r matters only if its center lies within r of the
    cone, a region of volume pi * (t^2 L^3 / 3 + t L^2 r + L r^2). The count is
    Poisson in the mean of that volume over the size law (r1 = E[r],
    r2 = E[r^2]); each particle picks the volume term, then its radius from
    the matching size-biased law, then a position inside its own region.
    """
    t = tan_half
    w0 = t * t * length**3 / 3.0
    w1 = t * length * length * r1
    w2 = length * r2
    wsum = w0 + w1 + w2
    n = np.random.poisson(density * math.pi * wsum)
    out = np.empty((n, 4))
    for k in range(n):
        pick = np.random.random() * wsum
        order = 0 if pick < w0 else (1 if pick < w0 + w1 else 2)
        r = _draw_biased(kind, a, b, cap, scale, order) * 0.5e-3
        if t > 0.0:
            a3 = r**3
            b3 = (length * t + r) ** 3
            z = ((a3 + np.random.random() * (b3 - a3)) ** (1.0 / 3.0) - r) / t
        else:
            z = length * np.random.random()
        rho = (z * t + r) * math.sqrt(np.random.random())
        ang = 2.0 * math.pi * np.random.random()
        out[k, 0] = rho * math.cos(ang)
        out[k, 1] = rho * math.sin(ang)
        out[k, 2] = z
        out[k, 3] = r
    return out


@njit(cache=True)
def _fill_tubes(rays, lengths, density, r2, kind, a, b, cap, scale):
    """Particles whose sphere touches at least one ray segment.

    Tube j (radius r around ray j) gets Poisson(density * pi * E[r^2] * L_j)
    particles with radii from the r^2-biased law; a particle is kept only if
    no earlier tube of its own radius contains it, which makes the union an
    exact Poisson field.
    """
    n_rays = rays.shape[0]
    counts = np.empty(n_rays, dtype=np.int64)
    total = 0
    for j in range(n_rays):
        counts[j] = np.random.poisson(density * math.pi * r2 * lengths[j])
        total += counts[j]
    out = np.empty((total, 4))
    kept = 0
    for j in range(n_rays):
        d = rays[j]
        u, v = _basis(d)
        for _ in range(counts[j]):
            r = _draw_biased(kind, a, b, cap, scale, 2) * 0.5e-3
            s = lengths[j] * np.random.random()
            rho = r * math.sqrt(np.random.random())
            ang = 2.0 * math.pi * np.random.random()
            ou, ov = rho * math.cos(ang), rho * math.sin(ang)
            x = s * d[0] + ou * u[0] + ov * v[0]
            y = s * d[1] + ou * u[1] + ov * v[1]
            z = s * d[2] + ou * u[2] + ov * v[2]
            owned = True
            for i in range(j):
                si = x * rays[i, 0] + y * rays[i, 1] + z * rays[i, 2]
                if si < 0.0 or si > lengths[i]:
                    continue
                qx, qy, qz = x - si * rays[i, 0], y - si * rays[i, 1], z - si * rays[i, 2]
                if qx * qx + qy * qy + qz * qz <= r * r:
                    owned = False
                    break
            if owned:
                out[kept, 0] = x
                out[kept, 1] = y
                out[kept, 2] = z
                out[kept, 3] = r
                kept += 1
    return out[:kept]


@njit(cache=True)
def _precip_kernel(xyz, seeds, rays, tan_half, density, r1, r2, kind, a, b, cap, scale, theta_mod, theta_scatter, ilo, ihi):
    n = xyz.shape[0]
    status = np.zeros(n, dtype=np.int8)
    hit_ratio = np.zeros(n)
    moved = np.zeros((n, 3))
    moved_int = np.zeros(n)
    n_rays = rays.shape[0]
    for i in range(n):
        p = xyz[i]
        rng_ = math.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
        if rng_ == 0.0:
            continue
        np.random.seed(seeds[i])
        axis = p / rng_
        u, v = _basis(axis)
        lengths = rng_ / rays[:, 2]
        tube_volume = r2 * lengths.sum()
        cone_volume = tan_half * tan_half * rng_**3 / 3.0 + tan_half * rng_ * rng_ * r1 + rng_ * r2
        if tube_volume < cone_volume:
            particles = _fill_tubes(rays, lengths, density, r2, kind, a, b, cap, scale)
        else:
            particles = _fill_cone(rng_, tan_half, density, r1, r2, kind, a, b, cap, scale)
        if particles.shape[0] == 0:
            continue
        ray_hit, per_particle = _trace_beam(particles, rays, rng_)
        n_hit = 0
        for j in range(n_rays):
            if ray_hit[j]:
                n_hit += 1
        h = n_hit / n_rays
        hit_ratio[i] = h
        if h <= theta_mod:
            continue
        best = -1
        best_cnt = 0
        best_dist = 0.0
        for k in range(particles.shape[0]):
            c = per_particle[k]
            if c == 0:
                continue
            dist = particles[k, 0] ** 2 + particles[k, 1] ** 2 + particles[k, 2] ** 2
            if c > best_cnt or (c == best_cnt and dist < best_dist):
                best, best_cnt, best_dist = k, c, dist
        if best_cnt / n_hit > theta_scatter:
            status[i] = RELOCATE
            lx, ly, lz = particles[best, 0], particles[best, 1], particles[best, 2]
            for q in range(3):
                moved[i, q] = lx * u[q] + ly * v[q] + lz * axis[q]
            moved_int[i] = np.random.uniform(ilo, ihi)
        else:
            status[i] = DELETE
    return status, hit_ratio, moved, moved_int


@dataclass(frozen=True)
class PrecipitationTrace:
    """Per-input-point outcome of a rain/snow run, kept for diagnostics and tests."""

    status: np.ndarray
    hit_ratio: np.ndarray


def _require_clear(cloud: PointCloud):
    if not cloud.is_clear:
        raise DoubleAugmentationError("input cloud already carries noise labels")


def _assemble(cloud, keep_mask, keep_int, moved_xyz, moved_int) -> PointCloud:
    xyz = np.concatenate([cloud.xyz[keep_mask], moved_xyz.astype(np.float32)])
    inten = np.concatenate([keep_int.astype(np.float32), moved_int.astype(np.float32)])
    labels = np.concatenate(
        [np.full(int(keep_mask.sum()), NoiseLabel.NO_NOISE, np.uint8), np.full(len(moved_xyz), NoiseLabel.NOISE, np.uint8)]
    )
    return PointCloud(xyz, inten, labels, cloud.frame_id, cloud.vehicle_id, cloud.timestamp)


def simulate_precipitation(
    cloud: PointCloud,
    density: float,
    sampler: Optional[DiameterSampler],
    beam: BeamModel,
    theta_mod: float,
    theta_scatter: float,
    relocated_intensity_range: tuple,
    rng: RngStream,
    return_trace: bool = False,
):
    """Shared rain/snow procedure; see the module docstring."""
    _require_clear(cloud)
    n = len(cloud)
    if density == 0 or n == 0:
        out = cloud.with_labels(np.zeros(n, np.uint8))
        trace = PrecipitationTrace(np.zeros(n, np.int8), np.zeros(n))
        return (out, trace) if return_trace else out
    s = sampler
    xyz = cloud.xyz.astype(np.float64)
    lo, hi = relocated_intensity_range
    status, hit_ratio, moved, moved_int = _precip_kernel(
        xyz, rng.beam_seeds(n), beam.local_directions(), beam.tan_half, float(density),
        s.radius_moment(1), s.radius_moment(2),
        s.kind, s.a, s.b, s.cap, s.scale, float(theta_mod), float(theta_scatter), float(lo), float(hi),
    )
    keep = status == KEEP
    reloc = status == RELOCATE
    keep_int = cloud.intensity[keep].astype(np.float64) * (1.0 - hit_ratio[keep])
    out = _assemble(cloud, keep, keep_int, moved[reloc], moved_int[reloc])
    return (out, PrecipitationTrace(status, hit_ratio)) if return_trace else out


def simulate_rain(cloud, params: RainParams, beam=BeamModel(), cfg=RainConfig(), rng=RngStream(), return_trace=False):
    sampler = rain_sampler(params, cfg) if params.drop_density > 0 else None
    return simulate_precipitation(
        cloud, params.drop_density, sampler, beam, cfg.theta_mod, cfg.theta_scatter,
        cfg.relocated_intensity_range, rng, return_trace,
    )


def simulate_snow(cloud, params: SnowParams, beam=BeamModel(), cfg=SnowConfig(), rng=RngStream(), sampler=None, return_trace=False):
    """Snow uses the rain procedure with flake sizes; ``sampler`` overrides the size law."""
    if sampler is None and params.flake_density > 0:
        sampler = snow_sampler(params, cfg)
    return simulate_precipitation(
        cloud, params.flake_density, sampler, beam, cfg.theta_mod, cfg.theta_scatter,
        cfg.relocated_intensity_range, rng, return_trace,
    )


# -- fog -------------------------------------------------------------------------


def extinction(params: FogParams, cfg: FogConfig = FogConfig()) -> float:
    return cfg.contrast_constant / params.viewing_distance


def fog_transmission(ranges, params: FogParams, cfg: FogConfig = FogConfig()) -> np.ndarray:
    """Two-way power transmission through homogeneous fog."""
    return np.exp(-2.0 * extinction(params, cfg) * np.asarray(ranges, dtype=np.float64))


def truncated_exponential(u, mean: float, lo, hi):
    """Inverse CDF of an exponential with ``mean`` restricted to [lo, hi]."""
    lo = np.asarray(lo, dtype=np.float64)
    width = np.maximum(np.asarray(hi, dtype=np.float64) - lo, 0.0)
    return lo - mean * np.log1p(-u * -np.expm1(-width / mean))


def simulate_fog(cloud: PointCloud, params: FogParams, cfg: FogConfig = FogConfig(), rng: RngStream = RngStream()) -> PointCloud:
    _require_clear(cloud)
    n = len(cloud)
    if extinction(params, cfg) == 0.0:
        # no extinction, no fog: even sub-threshold returns stay detectable
        return cloud.with_labels(np.zeros(n, np.uint8))
    gen = rng.generator()
    u_scatter, u_range, u_int = gen.random(n), gen.random(n), gen.random(n)
    r = cloud.ranges
    trans = fog_transmission(r, params, cfg)
    attenuated = cloud.intensity.astype(np.float64) * trans
    keep = (attenuated >= cfg.detect_threshold) | (r == 0)
    attenuated[r == 0] = cloud.intensity[r == 0]
    reloc = ~keep & (u_scatter < cfg.scatter_prob)

    hi = np.minimum(r[reloc], params.viewing_distance)
    lo = np.minimum(cfg.min_range, hi)
    new_r = truncated_exponential(u_range[reloc], cfg.scatter_mean_range, lo, hi)
    bearing = cloud.xyz[reloc].astype(np.float64) / r[reloc, None]
    moved = bearing * new_r[:, None]
    nlo, nhi = cfg.noise_intensity_range
    moved_int = nlo + (nhi - nlo) * u_int[reloc]
    return _assemble(cloud, keep, attenuated[keep], moved, moved_int)
