"""Point-cloud data model, poses and file ingestion.

Clouds are stored column-wise as numpy arrays (``xyz`` float32 ``(N, 3)``,
``intensity`` float32 ``(N,)``, optional ``labels`` uint8 ``(N,)``) rather
than as a list of point objects; :class:`Point` exists for single-point
construction and inspection.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation


class NoiseLabel(enum.IntEnum):
    NO_NOISE = 0
    NOISE = 1


class PCDParseError(ValueError):
    """Malformed ASCII PCD input. ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WVPCFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.z])):
            raise ValueError("point coordinates must be finite")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity {self.intensity} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class PointCloud:
    xyz: np.ndarray
    intensity: np.ndarray
    labels: Optional[np.ndarray] = None
    frame_id: str = ""
    vehicle_id: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float32).reshape(-1, 3)
        intensity = np.array(self.intensity, dtype=np.float32).reshape(-1)
        if len(intensity) != len(xyz):
            raise ValueError(f"{len(xyz)} points but {len(intensity)} intensities")
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite (NaN/inf rejected)")
        if len(intensity) and not ((intensity >= 0).all() and (intensity <= 1).all()):
            raise ValueError("intensities must lie in [0, 1]")
        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.uint8).reshape(-1)
            if len(labels) != len(xyz):
                raise ValueError(f"{len(xyz)} points but {len(labels)} labels")
            if (labels > 1).any():
                raise ValueError("labels must be 0 (no noise) or 1 (noise)")
            labels.setflags(write=False)
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        xyz.setflags(write=False)
        intensity.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_points(cls, points, labels=None, **meta) -> "PointCloud":
        pts = list(points)
        xyz = np.array([[p.x, p.y, p.z] for p in pts], dtype=np.float32).reshape(-1, 3)
        intensity = np.array([p.intensity for p in pts], dtype=np.float32)
        return cls(xyz, intensity, labels, **meta)

    @classmethod
    def empty(cls, **meta) -> "PointCloud":
        return cls(np.zeros((0, 3), np.float32), np.zeros(0, np.float32), **meta)

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> Point:
        x, y, z = (float(v) for v in self.xyz[i])
        return Point(x, y, z, float(self.intensity[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        return (
            np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.intensity, other.intensity)
            and (self.labels is None or np.array_equal(self.labels, other.labels))
            and (self.frame_id, self.vehicle_id, self.timestamp)
            == (other.frame_id, other.vehicle_id, other.timestamp)
        )

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.xyz.astype(np.float64), axis=1)

    @property
    def is_clear(self) -> bool:
        """True when no point carries a noise label."""
        return self.labels is None or not self.labels.any()

    def with_labels(self, labels) -> "PointCloud":
        return replace(self, labels=labels)


@dataclass(frozen=True, eq=False)
class Pose:
    """Sensor-to-world transform. ``rotation`` is a unit quaternion (w, x, y, z)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    vehicle_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not (np.isfinite(t).all() and np.isfinite(q).all()):
            raise ValueError("pose must be finite")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {np.linalg.norm(q):.9f} is not 1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def from_yaw(cls, translation, yaw: float, vehicle_id: str = "") -> "Pose":
        return cls(translation, [np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)], vehicle_id)

    def _scipy(self) -> Rotation:
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w])

    def matrix(self) -> np.ndarray:
        return self._scipy().as_matrix()

    def inverse(self) -> "Pose":
        inv = self._scipy().inv()
        x, y, z, w = inv.as_quat()
        q = np.array([w, x, y, z])
        return Pose(-inv.apply(self.translation), q / np.linalg.norm(q), self.vehicle_id)

    def to_json(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "translation": [float(v) for v in self.translation],
            "rotation": [float(v) for v in self.rotation],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Pose":
        return cls(d["translation"], d["rotation"], str(d.get("vehicle_id", "")))


def load_pose(path) -> Pose:
    return Pose.from_json(json.loads(Path(path).read_text()))


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Rotate then translate every point; intensities and labels are carried over."""
    xyz = cloud.xyz.astype(np.float64) @ pose.matrix().T + pose.translation
    return replace(cloud, xyz=xyz.astype(np.float32))


# -- ASCII PCD -----------------------------------------------------------------

_PCD_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def _normalise_intensity(raw: np.ndarray, scale: Optional[float]) -> np.ndarray:
    if scale is None:
        scale = 255.0 if len(raw) and raw.max() > 1.0 else 1.0
    return np.clip(raw / scale, 0.0, 1.0)


def read_pcd(path, intensity_scale: Optional[float] = None) -> PointCloud:
    """Read the ASCII subset of PCD v0.7 with at least ``x y z intensity`` fields.

    Intensities are divided by ``intensity_scale`` when given. Otherwise a
    cloud whose maximum intensity exceeds 1 is assumed to be 8-bit and is
    divided by 255. A ``label`` field, if present, becomes the noise labels.
    """
    path = Path(path)
    header: dict[str, tuple[list[str], int]] = {}
    lines = path.read_text().splitlines()
    data_start = None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, *values = stripped.split()
        key = key.upper()
        if key not in _PCD_KEYS:
            raise PCDParseError(f"unexpected header entry {key!r}", lineno)
        header[key] = (values, lineno)
        if key == "DATA":
            if values != ["ascii"]:
                raise PCDParseError(f"only DATA ascii is supported, got {' '.join(values)!r}", lineno)
            data_start = lineno
            break
    if data_start is None:
        raise PCDParseError("missing DATA line", len(lines) + 1)
    if "FIELDS" not in header:
        raise PCDParseError("missing FIELDS line", data_start)
    fields, fields_line = header["FIELDS"]
    for name in ("x", "y", "z", "intensity"):
        if name not in fields:
            raise PCDParseError(f"FIELDS lacks {name!r}", fields_line)
    if "COUNT" in header:
        counts, count_line = header["COUNT"]
        if len(counts) != len(fields) or any(c != "1" for c in counts):
            raise PCDParseError("only scalar fields (COUNT 1) are supported", count_line)
    expected = None
    if "POINTS" in header:
        values, pline = header["POINTS"]
        try:
            expected = int(values[0])
        except (IndexError, ValueError):
            raise PCDParseError("POINTS must be an integer", pline) from None

    rows = []
    for lineno in range(data_start + 1, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens:
            continue
        if len(tokens) != len(fields):
            raise PCDParseError(f"expected {len(fields)} values, found {len(tokens)}", lineno)
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise PCDParseError(f"non-numeric value in row {lines[lineno - 1]!r}", lineno) from None
    if expected is not None and expected != len(rows):
        raise PCDParseError(f"POINTS declares {expected} rows, found {len(rows)}", header["POINTS"][1])

    table = np.array(rows, dtype=np.float64).reshape(-1, len(fields))
    col = {name: i for i, name in enumerate(fields)}
    xyz = table[:, [col["x"], col["y"], col["z"]]]
    intensity = _normalise_intensity(table[:, col["intensity"]], intensity_scale)
    labels = table[:, col["label"]].astype(np.uint8) if "label" in col else None
    return PointCloud(xyz, intensity, labels, frame_id=path.parent.name, vehicle_id=path.stem)


def write_pcd(cloud: PointCloud, path) -> None:
    fields = ["x", "y", "z", "intensity"] + (["label"] if cloud.labels is not None else [])
    n = len(cloud)
    head = [
        "VERSION 0.7",
        "FIELDS " + " ".join(fields),
        "SIZE " + " ".join(["4"] * 4 + (["1"] if cloud.labels is not None else [])),
        "TYPE " + " ".join(["F"] * 4 + (["U"] if cloud.labels is not None else [])),
        "COUNT " + " ".join(["1"] * len(fields)),
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        "DATA ascii",
    ]
    # str() of a float32 is its shortest round-tripping decimal
    cols = [[str(v) for v in cloud.xyz[:, k]] for k in range(3)] + [[str(v) for v in cloud.intensity]]
    if cloud.labels is not None:
        cols.append([str(int(v)) for v in cloud.labels])
    body = [" ".join(row) for row in zip(*cols)]
    Path(path).write_text("\n".join(head + body) + "\n")


# -- WVPC binary ----------------------------------------------------------------

WVPC_MAGIC = b"WVPC"
WVPC_VERSION = 1
_LABEL_FLAG = 0x80
_HEAD = struct.Struct("<4sBI")
_RECORD = np.dtype("<f4")


def encode_wvpc(cloud: PointCloud) -> bytes:
    flags = WVPC_VERSION | (_LABEL_FLAG if cloud.labels is not None else 0)
    records = np.empty((len(cloud), 4), dtype=_RECORD)
    records[:, :3] = cloud.xyz
    records[:, 3] = cloud.intensity
    parts = [_HEAD.pack(WVPC_MAGIC, flags, len(cloud)), records.tobytes()]
    if cloud.labels is not None:
        parts.append(cloud.labels.tobytes())
    return b"".join(parts)


def decode_wvpc(data: bytes, **meta) -> PointCloud:
    if len(data) < _HEAD.size:
        raise WVPCFormatError(f"truncated header: {len(data)} bytes")
    magic, flags, count = _HEAD.unpack_from(data)
    if magic != WVPC_MAGIC:
        raise WVPCFormatError(f"bad magic {magic!r}")
    if flags & 0x7F != WVPC_VERSION:
        raise WVPCFormatError(f"unsupported version {flags & 0x7F}")
    has_labels = bool(flags & _LABEL_FLAG)
    expected = _HEAD.size + 16 * count + (count if has_labels else 0)
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "trailing bytes in"
        raise WVPCFormatError(f"{kind} payload: expected {expected} bytes, got {len(data)}")
    records = np.frombuffer(data, dtype=_RECORD, count=4 * count, offset=_HEAD.size).reshape(-1, 4)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=_HEAD.size + 16 * count)
    return PointCloud(records[:, :3], records[:, 3], labels, **meta)


def write_binary(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(encode_wvpc(cloud))


def read_binary(path) -> PointCloud:
    path = Path(path)
    return decode_wvpc(path.read_bytes(), frame_id=path.parent.name, vehicle_id=path.stem)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix == ".pcd":
        return read_pcd(path)
    if path.suffix == ".wvpc":
        return read_binary(path)
    raise ValueError(f"{path}: unknown point-cloud extension {path.suffix!r}")
