"""Shared hypothesis strategies and random generators."""
import numpy as np
from hypothesis import strategies as st

from weathercp.voxel import GridSpec, SparseVoxelGrid


def random_grid(g: np.random.Generator, spec: GridSpec, n: int, labels=False, features=0) -> SparseVoxelGrid:
    total = int(np.prod(spec.dims))
    n = min(n, total)
    if 2 * n >= total:
        keys = np.sort(g.permutation(total)[:n])
    else:
        keys = np.unique(g.integers(0, total, n + n // 4 + 8))
        keys = np.sort(g.permutation(keys)[:n]) if len(keys) >= n else np.unique(g.choice(total, n, replace=False))
    lab = g.integers(0, 2, len(keys)).astype(np.uint8) if labels else None
    feat = g.normal(size=(len(keys), features)).astype(np.float32) if features else None
    return SparseVoxelGrid(spec, spec.unlinear(keys), lab, feat)


@st.composite
def specs(draw, max_dim=(5600, 1600, 40)):
    dims = tuple(draw(st.integers(1, m)) for m in max_dim)
    origin = [draw(st.floats(-200, 200, allow_nan=False)) for _ in range(3)]
    size = [draw(st.floats(0.01, 1.0)) for _ in range(3)]
    return GridSpec(origin, size, dims)


@st.composite
def grids(draw, max_n=300, labels=False, features=0, spec=None):
    spec = spec or draw(specs())
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(0, max_n))
    return random_grid(np.random.default_rng(seed), spec, n, labels, features)
