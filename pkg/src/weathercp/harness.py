"""Experiment runner: weather augmentation, sharing schemes and reports.

Dataset layout::

    root/<scenario_id>/poses.json
    root/<scenario_id>/<frame_id>/<vehicle_id>.wvpc   (or .pcd)

``poses.json`` holds ``{"scenario_id", "cooperative": [ids],
"frames": {frame_id: [{"vehicle_id", "translation", "rotation"}, ...]}}``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import denoise as dn
from .core import PointCloud, Pose, read_cloud
from .voxel import GridSpec, SparseVoxelGrid, apply_mask, voxelize
from .weather import (
    BeamModel,
    FogConfig,
    FogParams,
    RainConfig,
    RainParams,
    RngStream,
    SnowConfig,
    SnowParams,
    simulate_fog,
    simulate_rain,
    simulate_snow,
)
from .wire import DEFAULT_FREQUENCY, DEFAULT_RANGE_LIMIT, bits_per_voxel, encode, in_range, reduction

WEATHER_KINDS = ("clear", "rain", "snow", "fog-light", "fog-dense")
SCHEMES = ("noisy", "denoised", "mixed")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


class DatasetError(ValueError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


# -- configuration -----------------------------------------------------------------


def _range(lo, hi):
    return field(default_factory=lambda: (float(lo), float(hi)))


@dataclass(frozen=True)
class SnowRanges:
    rate: tuple = _range(5, 20)
    density: tuple = _range(500, 2000)
    scale: tuple = _range(2, 5)


@dataclass(frozen=True)
class RainRanges:
    rate: tuple = _range(20, 50)
    density: tuple = _range(1000, 2000)


@dataclass(frozen=True)
class FogRanges:
    viewing: tuple = _range(70, 200)


@dataclass(frozen=True)
class WeatherRanges:
    snow: SnowRanges = field(default_factory=SnowRanges)
    rain: RainRanges = field(default_factory=RainRanges)
    fog_light: FogRanges = field(default_factory=FogRanges)
    fog_dense: FogRanges = field(default_factory=lambda: FogRanges((30.0, 100.0)))

    def __post_init__(self):
        for group in (self.snow, self.rain, self.fog_light, self.fog_dense):
            for f in dataclasses.fields(group):
                lo, hi = getattr(group, f.name)
                if lo > hi:
                    raise ValueError(f"range {f.name} has lo > hi: {(lo, hi)}")


@dataclass(frozen=True)
class DenoiserConfig:
    name: str = "oracle"
    flip_noise: float = 0.0
    flip_no_noise: float = 0.0
    intensity_threshold: float = 0.1
    neighbor_radius: int = 1
    min_neighbors: int = 2

    def build(self) -> dn.Denoiser:
        if self.name == "oracle":
            return dn.OracleDenoiser(self.flip_noise, self.flip_no_noise)
        if self.name == "heuristic":
            return dn.HeuristicDenoiser(self.intensity_threshold, self.neighbor_radius, self.min_neighbors)
        raise ConfigError("denoiser.name", f"unknown denoiser {self.name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    weather: str = "rain"
    schemes: tuple = SCHEMES
    high_intensity: bool = False
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    beam: BeamModel = field(default_factory=BeamModel)
    rain: RainConfig = field(default_factory=RainConfig)
    snow: SnowConfig = field(default_factory=SnowConfig)
    fog: FogConfig = field(default_factory=FogConfig)
    ranges: WeatherRanges = field(default_factory=WeatherRanges)
    range_limit: float = DEFAULT_RANGE_LIMIT
    frequency: float = DEFAULT_FREQUENCY

    def __post_init__(self):
        if self.weather not in WEATHER_KINDS:
            raise ConfigError("weather", f"expected one of {WEATHER_KINDS}, got {self.weather!r}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError("schemes", f"unknown scheme(s) {bad}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "schemes", tuple(self.schemes))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _to_plain(obj):
    if isinstance(obj, GridSpec):
        return obj.to_json()
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_to_json(cfg: ExperimentConfig) -> dict:
    return _to_plain(cfg)


def _build(cls, data, path: str):
    if cls is GridSpec:
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        try:
            defaults = GridSpec().to_json()
            unknown = set(data) - set(defaults)
            if unknown:
                raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
            return GridSpec.from_json({**defaults, **data})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(path, str(exc)) from None
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    kwargs = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(sub, "unknown field")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default) or isinstance(default, GridSpec):
            kwargs[key] = _build(type(default), value, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(sub, "expected a list")
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(sub, "expected true/false")
            kwargs[key] = value
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(sub, f"expected a number, got {value!r}")
            kwargs[key] = type(default)(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or cls.__name__, str(exc)) from None


def config_from_json(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return config_from_json(data)


# -- protocol pieces --------------------------------------------------------------------


def sample_scenario_params(ranges: WeatherRanges, kind: str, scenario_id: str, seed: int):
    """One parameter set per scenario, uniform within the configured ranges."""
    gen = RngStream(seed, ("weather-params", kind, scenario_id)).generator()

    def draw(lo_hi):
        lo, hi = lo_hi
        return float(gen.uniform(lo, hi)) if hi > lo else float(lo)

    if kind == "clear":
        return None
    if kind == "rain":
        return RainParams(draw(ranges.rain.rate), draw(ranges.rain.density))
    if kind == "snow":
        return SnowParams(draw(ranges.snow.rate), draw(ranges.snow.density), draw(ranges.snow.scale))
    if kind == "fog-light":
        return FogParams(draw(ranges.fog_light.viewing))
    if kind == "fog-dense":
        return FogParams(draw(ranges.fog_dense.viewing))
    raise ValueError(f"unknown weather kind {kind!r}")


def high_intensity_params(ranges: WeatherRanges, kind: str):
    """Upper ends of the rain/snow ranges, lowest viewing distance for fog."""
    if kind == "clear":
        return None
    if kind == "rain":
        return RainParams(ranges.rain.rate[1], ranges.rain.density[1])
    if kind == "snow":
        return SnowParams(ranges.snow.rate[1], ranges.snow.density[1], ranges.snow.scale[1])
    if kind == "fog-light":
        return FogParams(ranges.fog_light.viewing[0])
    if kind == "fog-dense":
        return FogParams(ranges.fog_dense.viewing[0])
    raise ValueError(f"unknown weather kind {kind!r}")


def params_to_json(params) -> Optional[dict]:
    return None if params is None else dataclasses.asdict(params)


def select_ego(vehicle_ids, seed: int, scenario_id: str = "", frame_id: str = "") -> str:
    ids = sorted(vehicle_ids)
    if not ids:
        raise ValueError("no vehicles to choose an ego from")
    gen = RngStream(seed, ("ego", scenario_id, frame_id)).generator()
    return ids[int(gen.integers(len(ids)))]


def assign_mixed(cooperative_ids) -> set:
    """The first half (rounded down) of the sorted ids denoise."""
    ids = sorted(cooperative_ids)
    return set(ids[: len(ids) // 2])


def augment(cloud: PointCloud, kind: str, params, cfg: ExperimentConfig, rng: RngStream) -> PointCloud:
    if kind == "clear":
        return cloud.with_labels(np.zeros(len(cloud), np.uint8))
    if kind == "rain":
        return simulate_rain(cloud, params, cfg.beam, cfg.rain, rng)
    if kind == "snow":
        return simulate_snow(cloud, params, cfg.beam, cfg.snow, rng)
    if kind in ("fog-light", "fog-dense"):
        return simulate_fog(cloud, params, cfg.fog, rng)
    raise ValueError(f"unknown weather kind {kind!r}")


# -- dataset --------------------------------------------------------------------------


@dataclass
class Scenario:
    scenario_id: str
    root: Path
    frames: dict  # frame_id -> {vehicle_id: Pose}
    cooperative: tuple

    def cloud_path(self, frame_id: str, vehicle_id: str) -> Path:
        for ext in (".wvpc", ".pcd"):
            p = self.root / frame_id / f"{vehicle_id}{ext}"
            if p.exists():
                return p
        raise DatasetError(self.root / frame_id / f"{vehicle_id}.wvpc", "missing point cloud")


def load_scenario(directory) -> Scenario:
    directory = Path(directory)
    meta_path = directory / "poses.json"
    if not meta_path.exists():
        raise DatasetError(meta_path, "missing poses.json")
    try:
        meta = json.loads(meta_path.read_text())
        frames = {}
        for frame_id, entries in meta["frames"].items():
            poses = {}
            for e in entries:
                pose = Pose.from_json(e)
                poses[pose.vehicle_id] = pose
            frames[str(frame_id)] = poses
        cooperative = tuple(sorted(meta.get("cooperative") or sorted({v for p in frames.values() for v in p})))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(meta_path, f"malformed poses file: {exc}") from None
    if len(cooperative) < 2:
        raise DatasetError(meta_path, "a scenario needs at least two cooperative vehicles")
    if not frames:
        raise DatasetError(meta_path, "no frames listed")
    vehicle_sets = {frozenset(p) for p in frames.values()}
    if len(vehicle_sets) != 1:
        raise DatasetError(meta_path, "frames list different vehicle sets")
    scenario = Scenario(str(meta.get("scenario_id", directory.name)), directory, frames, cooperative)
    for frame_id, poses in frames.items():
        if not (directory / frame_id).is_dir():
            raise DatasetError(directory / frame_id, "frame directory missing")
        for vid in poses:
            scenario.cloud_path(frame_id, vid)
    return scenario


def load_dataset(root) -> list[Scenario]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(root, "dataset root is not a directory")
    scenarios = [load_scenario(d) for d in sorted(root.iterdir()) if (d / "poses.json").exists()]
    if not scenarios:
        raise DatasetError(root, "no scenario directories with poses.json")
    return scenarios


# -- report ------------------------------------------------------------------------------

MESSAGE_COLUMNS = ("scenario", "scheme", "vehicle", "frame", "bits", "voxels", "noise_voxels")
TABLE_COLUMNS = (
    "weather", "high_intensity", "noisy_mbps", "denoised_mbps", "mixed_mbps", "reduction_pct",
    "mixed_reduction_pct", "accuracy_noise", "accuracy_no_noise", "f1_noise", "f1_no_noise",
)


def _sig6(x):
    if isinstance(x, float) and math.isfinite(x):
        return float(f"{x:.6g}")
    if isinstance(x, dict):
        return {k: _sig6(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_sig6(v) for v in x]
    return x


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


@dataclass
class ExperimentReport:
    seed: int = 0
    weather: str = "clear"
    high_intensity: bool = False
    config: dict = field(default_factory=dict)
    scenarios: list = field(default_factory=list)
    schemes: dict = field(default_factory=dict)
    per_scenario: list = field(default_factory=list)
    denoising: Optional[dict] = None
    messages: list = field(default_factory=list)

    def to_json(self) -> dict:
        return _sig6(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentReport":
        return cls(**data)

    def reduction(self, scheme: str = "denoised") -> Optional[float]:
        entry = self.schemes.get(scheme)
        return None if entry is None else entry["reduction_pct"]


def _scheme_summary(rows: list, baseline: Optional[dict], bpv: int, frequency: float) -> dict:
    """Aggregate message rows; ``baseline=None`` means this is the noisy baseline itself."""
    bits = [r["bits"] for r in rows]
    voxels = sum(r["voxels"] for r in rows)
    noise = sum(r["noise_voxels"] for r in rows)
    mean_bits = float(np.mean(bits)) if bits else None
    mbps = mean_bits * frequency / 1e6 if bits else None
    out = {
        "messages": len(rows),
        "total_bits": int(sum(bits)),
        "mean_bits": mean_bits,
        "bandwidth_mbps": mbps,
        "bits_per_voxel": bpv,
        "voxels": int(voxels),
        "noise_voxels": int(noise),
        "payload_bits": int(voxels * bpv),
        "reduction_pct": None,
        "payload_reduction_pct": None,
    }
    if baseline is None:
        baseline = out
    if baseline["bandwidth_mbps"]:
        out["reduction_pct"] = reduction(baseline["bandwidth_mbps"], mbps)
        out["payload_reduction_pct"] = reduction(baseline["payload_bits"], out["payload_bits"])
    return out


def run_experiment(root, cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    """Run every scenario under ``root`` for one weather kind and all configured schemes."""
    scenarios = load_dataset(root)
    kind = cfg.weather
    clear = kind == "clear"
    schemes = ("noisy",) if clear else tuple(dict.fromkeys(("noisy",) + cfg.schemes))
    denoiser = None if clear else cfg.denoiser.build()
    bpv = bits_per_voxel(cfg.grid)
    messages = []
    scenario_meta = []
    total_cm = dn.ConfusionMatrix()

    for sc in scenarios:
        params = high_intensity_params(cfg.ranges, kind) if cfg.high_intensity else sample_scenario_params(
            cfg.ranges, kind, sc.scenario_id, cfg.seed
        )
        sc_messages = 0
        egos = {}
        for frame_id in sorted(sc.frames):
            poses = sc.frames[frame_id]
            ego = select_ego(poses, cfg.seed, sc.scenario_id, frame_id)
            egos[frame_id] = ego
            senders = [v for v in sc.cooperative if v != ego and v in poses]
            mixed = assign_mixed(senders)
            grids: dict[str, SparseVoxelGrid] = {}
            preds: dict[str, np.ndarray] = {}
            for vid in sorted(poses):
                cloud = read_cloud(sc.cloud_path(frame_id, vid))
                noisy = augment(cloud, kind, params, cfg, RngStream(cfg.seed, (sc.scenario_id, vid, frame_id)))
                grid = voxelize(noisy, cfg.grid)
                grids[vid] = grid
                if denoiser is not None:
                    pred = denoiser.classify(grid, noisy, RngStream(cfg.seed, ("denoise", sc.scenario_id, vid, frame_id)))
                    preds[vid] = pred
                    total_cm = total_cm + dn.confusion(pred, grid.labels)
            for vid in senders:
                if not in_range(poses[vid], poses[ego], cfg.range_limit):
                    continue
                for scheme in schemes:
                    do_denoise = scheme == "denoised" or (scheme == "mixed" and vid in mixed)
                    grid = apply_mask(grids[vid], preds[vid]) if do_denoise else grids[vid]
                    messages.append(
                        {
                            "scenario": sc.scenario_id,
                            "scheme": scheme,
                            "vehicle": vid,
                            "frame": frame_id,
                            "bits": 8 * len(encode(grid)),
                            "voxels": len(grid),
                            "noise_voxels": grid.noise_count,
                        }
                    )
                sc_messages += 1
        scenario_meta.append(
            {
                "scenario_id": sc.scenario_id,
                "params": params_to_json(params),
                "frames": len(sc.frames),
                "egos": egos,
                "senders_in_range": sc_messages,
            }
        )

    summary, per_scenario = {}, []
    for scheme in schemes:
        rows = [m for m in messages if m["scheme"] == scheme]
        summary[scheme] = _scheme_summary(rows, summary.get("noisy"), bpv, cfg.frequency)
    for sc in scenarios:
        base = None
        for scheme in schemes:
            rows = [m for m in messages if m["scheme"] == scheme and m["scenario"] == sc.scenario_id]
            entry = _scheme_summary(rows, base, bpv, cfg.frequency)
            if scheme == "noisy":
                base = entry
            per_scenario.append({"scenario_id": sc.scenario_id, "scheme": scheme, **entry})

    denoising = None
    if denoiser is not None:
        denoising = {
            "denoiser": cfg.denoiser.name,
            "confusion": total_cm.to_json(),
            "metrics": dn.metrics(total_cm).to_json(),
        }
    return ExperimentReport(
        seed=int(cfg.seed),
        weather=kind,
        high_intensity=cfg.high_intensity,
        config=config_to_json(cfg),
        scenarios=scenario_meta,
        schemes=summary,
        per_scenario=per_scenario,
        denoising=denoising,
        messages=messages,
    )


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n"


def messages_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MESSAGE_COLUMNS)
    for m in report.messages:
        w.writerow([_fmt(m[c]) for c in MESSAGE_COLUMNS])
    return buf.getvalue()


def table_row(report: ExperimentReport) -> dict:
    s = report.schemes
    metrics = (report.denoising or {}).get("metrics") or {}

    def get(scheme, key):
        return s.get(scheme, {}).get(key)

    return {
        "weather": report.weather,
        "high_intensity": report.high_intensity,
        "noisy_mbps": get("noisy", "bandwidth_mbps"),
        "denoised_mbps": get("denoised", "bandwidth_mbps"),
        "mixed_mbps": get("mixed", "bandwidth_mbps"),
        "reduction_pct": get("denoised", "reduction_pct"),
        "mixed_reduction_pct": get("mixed", "reduction_pct"),
        "accuracy_noise": metrics.get("accuracy_noise"),
        "accuracy_no_noise": metrics.get("accuracy_no_noise"),
        "f1_noise": metrics.get("f1_noise"),
        "f1_no_noise": metrics.get("f1_no_noise"),
    }


def table_csv(reports) -> str:
    """Bandwidth/denoising table, one row per weather run."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in reports:
        row = table_row(r)
        w.writerow([_fmt(row[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()


def emit_report(report: ExperimentReport, fmt: str, path) -> None:
    """Write ``report`` as JSON or as per-message CSV rows."""
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = messages_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    Path(path).write_text(text)


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_json(json.loads(Path(path).read_text()))
