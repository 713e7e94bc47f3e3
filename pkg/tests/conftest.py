import numpy as np
import pytest

from corsem.core import VolumeGeometry


@pytest.fixture
def line8_geometry():
    """1x1x8 line with a full mask and 1mm voxels."""
    return VolumeGeometry((1, 1, 8), (1.0, 1.0, 1.0), np.ones(8, bool))


@pytest.fixture
def small_geometry():
    """6x5x4 grid, full mask, anisotropic voxels."""
    return VolumeGeometry((6, 5, 4), (2.0, 2.0, 2.5), np.ones(120, bool))


def ball_mask_geometry(n=16, radius=7.8, voxel_mm=3.0):
    zz, yy, xx = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    c = (n - 1) / 2
    dist2 = (xx - c) ** 2 + (yy - c) ** 2 + (zz - c) ** 2
    mask = (dist2 <= radius * radius).reshape(-1)
    return VolumeGeometry((n, n, n), (voxel_mm,) * 3, mask)


def central_roi(geometry, size):
    """The `size` masked voxels nearest the grid center (a connected ball)."""
    nx, ny, nz = geometry.dims
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    cx, cy, cz = (nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2
    dist2 = ((xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2).reshape(-1)
    masked_dist2 = dist2[geometry.mask]
    return np.sort(np.argsort(masked_dist2, kind="stable")[:size]).astype(np.int64)
