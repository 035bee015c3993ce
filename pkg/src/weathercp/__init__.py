"""Weather-augmented LiDAR simulation and sparse-voxel message sharing."""
from .core import Point, PointCloud, Pose, read_cloud, read_pcd, transform, write_binary, write_pcd
from .voxel import GridSpec, SparseVoxelGrid, apply_mask, scatter_fuse, voxelize
from .wire import decode, encode, message_bits

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "Point", "PointCloud", "Pose", "SparseVoxelGrid", "apply_mask", "decode", "encode",
    "message_bits", "read_cloud", "read_pcd", "scatter_fuse", "transform", "voxelize", "write_binary",
    "write_pcd",
]
