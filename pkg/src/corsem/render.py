"""Slice rendering of masked fields to binary PPM images.

The target format is dependency-free and bit-exact: ``P6 <w> <h> 255``
followed by binary RGB.  Values map linearly from [vmin, vmax] through a
blue-white-red diverging colormap; out-of-mask pixels are black.
"""

from __future__ import annotations

import numpy as np

from .core import VolumeGeometry

COLOR_LOW = (0, 0, 255)
COLOR_MID = (255, 255, 255)
COLOR_HIGH = (255, 0, 0)
AXES = {"x": 2, "y": 1, "z": 0}


def diverging_rgb(t: np.ndarray) -> np.ndarray:
    """Map t in [0,1] to RGB: blue at 0, white at 0.5, red at 1."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    lo = np.array(COLOR_LOW, dtype=np.float64)
    mid = np.array(COLOR_MID, dtype=np.float64)
    hi = np.array(COLOR_HIGH, dtype=np.float64)
    first = t[..., None] * 2.0
    rgb = np.where(t[..., None] <= 0.5,
                   lo + (mid - lo) * first,
                   mid + (hi - mid) * (first - 1.0))
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def render_slice(values, geometry: VolumeGeometry, axis: str, index: int,
                 path, vmin=None, vmax=None) -> None:
    """Render one grid slice of a masked field as a P6 PPM file.

    `values` holds one value per masked voxel.  A constant field renders
    as the uniform midpoint color.  Signed-infinity sentinels are clamped
    to the color range endpoints.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != geometry.n_masked:
        raise ValueError("field length does not match mask")
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    grid_axis = AXES[axis]
    n_along = geometry.grid_shape()[grid_axis]
    if not 0 <= index < n_along:
        raise ValueError(f"slice index {index} out of range [0, {n_along})")

    grid = geometry.embed(values)
    mask_grid = geometry.mask.reshape(geometry.grid_shape())
    plane = np.take(grid, index, axis=grid_axis)
    plane_mask = np.take(mask_grid, index, axis=grid_axis)

    finite = values[np.isfinite(values)]
    if vmin is None:
        vmin = float(finite.min()) if finite.size else 0.0
    if vmax is None:
        vmax = float(finite.max()) if finite.size else 0.0
    if vmax > vmin:
        t = (np.clip(plane, vmin, vmax) - vmin) / (vmax - vmin)
    else:
        t = np.full(plane.shape, 0.5)
    rgb = diverging_rgb(t)
    rgb[~plane_mask] = 0

    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P6 {w} {h} 255\n".encode("ascii"))
        fh.write(rgb.tobytes(order="C"))
