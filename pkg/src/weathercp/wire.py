"""SVGM voxel messages and bandwidth accounting.

Message layout (all little-endian except the coordinate bitstream)::

    magic    4s   b"SVGM"
    version  u8   1
    origin   3 x f64
    size     3 x f32
    dims     3 x u16
    count    u32
    payload  count coordinates, each ix|iy|iz with ceil(log2(dim)) bits per
             axis, MSB first, zero-padded to a whole byte

Only coordinates are transmitted; labels and features never leave the
sender. See docs/formats.md for test vectors.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Pose
from .voxel import GridSpec, SparseVoxelGrid

MAGIC = b"SVGM"
VERSION = 1
HEADER = struct.Struct("<4sB3d3f3HI")
HEADER_BITS = 8 * HEADER.size  # 408
DEFAULT_FREQUENCY = 10.0  # Hz
DEFAULT_RANGE_LIMIT = 70.0  # m


class MessageError(ValueError):
    pass


def axis_bits(dims) -> tuple[int, int, int]:
    return tuple(max(0, math.ceil(math.log2(d))) if d > 1 else 0 for d in dims)


def payload_bytes(count: int, dims) -> int:
    return (count * sum(axis_bits(dims)) + 7) // 8


def message_bits(grid: SparseVoxelGrid) -> int:
    """Exact encoded size in bits, header included, transport framing excluded."""
    return HEADER_BITS + 8 * payload_bytes(len(grid), grid.spec.dims)


def bits_per_voxel(spec: GridSpec) -> int:
    return sum(axis_bits(spec.dims))


def encode(grid: SparseVoxelGrid) -> bytes:
    spec = grid.spec
    if max(spec.dims) > 0xFFFF:
        raise MessageError(f"dims {spec.dims} exceed u16")
    n = len(grid)
    if n > 0xFFFFFFFF:
        raise MessageError(f"{n} voxels exceed u32 count")
    header = HEADER.pack(MAGIC, VERSION, *spec.origin, *spec.voxel_size, *spec.dims, n)
    bx, by, bz = axis_bits(spec.dims)
    width = bx + by + bz
    if n == 0 or width == 0:
        return header
    c = grid.coords.astype(np.uint64)
    packed = (c[:, 0] << np.uint64(by + bz)) | (c[:, 1] << np.uint64(bz)) | c[:, 2]
    bits = np.unpackbits(packed.astype(">u8").view(np.uint8).reshape(n, 8), axis=1)[:, 64 - width:]
    return header + np.packbits(bits.ravel()).tobytes()


def decode(message: bytes) -> SparseVoxelGrid:
    if len(message) < HEADER.size:
        raise MessageError(f"message shorter than the {HEADER.size}-byte header")
    magic, version, ox, oy, oz, sx, sy, sz, dx, dy, dz, n = HEADER.unpack_from(message)
    if magic != MAGIC:
        raise MessageError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MessageError(f"unsupported version {version}")
    dims = (dx, dy, dz)
    if min(dims) < 1:
        raise MessageError(f"invalid dims {dims}")
    spec = GridSpec((ox, oy, oz), np.array([sx, sy, sz], dtype=np.float32), dims)
    expected = HEADER.size + payload_bytes(n, dims)
    if len(message) != expected:
        raise MessageError(f"count {n} needs {expected} bytes, message has {len(message)}")
    bx, by, bz = axis_bits(dims)
    width = bx + by + bz
    if n == 0 or width == 0:
        coords = np.zeros((n, 3), dtype=np.int64)
    else:
        bits = np.unpackbits(np.frombuffer(message, dtype=np.uint8, offset=HEADER.size))
        if bits[n * width:].any():
            raise MessageError("non-zero padding bits")
        rows = np.zeros((n, 64), dtype=np.uint8)
        rows[:, 64 - width:] = bits[: n * width].reshape(n, width)
        packed = np.packbits(rows, axis=1).view(">u8").ravel().astype(np.uint64)
        coords = np.stack(
            [
                packed >> np.uint64(by + bz),
                (packed >> np.uint64(bz)) & np.uint64((1 << by) - 1),
                packed & np.uint64((1 << bz) - 1),
            ],
            axis=1,
        ).astype(np.int64)
    if (coords >= np.array(dims)).any():
        raise MessageError("coordinate outside grid dims")
    if n > 1 and (np.diff(spec.linear(coords)) <= 0).any():
        raise MessageError("coordinates not strictly sorted")
    return SparseVoxelGrid(spec, coords)


def in_range(sender: Pose, ego: Pose, limit: float = DEFAULT_RANGE_LIMIT) -> bool:
    """Inclusive distance check between the two vehicles' positions."""
    return bool(np.linalg.norm(sender.translation - ego.translation) <= limit)


@dataclass
class BandwidthReport:
    bits: list = field(default_factory=list)  # one entry per (vehicle, frame) message
    frequency: float = DEFAULT_FREQUENCY
    bits_per_voxel: Optional[int] = None

    @property
    def mean_bits(self) -> float:
        return float(np.mean(self.bits))

    @property
    def mbps(self) -> float:
        return self.mean_bits * self.frequency / 1e6

    def reduction_vs(self, baseline: "BandwidthReport") -> float:
        return reduction(baseline.mbps, self.mbps)

    def to_json(self) -> dict:
        return {
            "messages": len(self.bits),
            "mean_bits": self.mean_bits,
            "frequency_hz": self.frequency,
            "bandwidth_mbps": self.mbps,
            "bits_per_voxel": self.bits_per_voxel,
        }


def bandwidth(frames: Sequence, freq: float = DEFAULT_FREQUENCY, bits_per_voxel: Optional[int] = None) -> BandwidthReport:
    """Average per-message bandwidth in Mbit/s (1 Mbit = 1e6 bits).

    ``frames`` is a flat sequence of message sizes in bits or a sequence of
    per-frame sequences (one entry per sending vehicle).
    """
    if freq <= 0:
        raise ValueError("frequency must be positive")
    flat = []
    for item in frames:
        if isinstance(item, (list, tuple, np.ndarray)):
            flat.extend(int(b) for b in item)
        else:
            flat.append(int(item))
    if not flat:
        raise ValueError("bandwidth of an empty message set is undefined")
    return BandwidthReport(flat, float(freq), bits_per_voxel)


def reduction(baseline: float, value: float) -> float:
    """Percent saved relative to ``baseline``."""
    return (1.0 - value / baseline) * 100.0
