"""Cut volumes into the units the classifiers consume: patches, ROIs and slices."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from volclf.data.volume import Volume
from volclf.errors import DataError

SAGITTAL = 0


def _array(volume) -> np.ndarray:
    return volume.data if isinstance(volume, Volume) else np.asarray(volume)


def patch_grid(shape: Sequence[int], size: int) -> list[tuple[int, int, int]]:
    """Tile origins, lexicographic over (x, y, z) tile indices."""
    counts = [e // size for e in shape]
    if min(counts) < 1:
        raise DataError(f"volume {tuple(shape)} is smaller than patch size {size}")
    return [
        (i * size, j * size, k * size)
        for i in range(counts[0])
        for j in range(counts[1])
        for k in range(counts[2])
    ]


def extract_patches(volume, size: int = 50) -> list[tuple[int, np.ndarray]]:
    """Non-overlapping ``size``-cubes tiled from the origin; high-end remainders dropped."""
    arr = _array(volume)
    return [
        (n, arr[x : x + size, y : y + size, z : z + size].copy())
        for n, (x, y, z) in enumerate(patch_grid(arr.shape, size))
    ]


def hemisphere_centroid(shape: Sequence[int], side: str) -> tuple[int, int, int]:
    """Default ROI centre: the centroid of the left or right half along axis 0."""
    if side not in ("left", "right"):
        raise DataError(f"side must be left or right, got {side!r}")
    dx, dy, dz = shape
    x = dx // 4 if side == "left" else (3 * dx) // 4
    return (x, dy // 2, dz // 2)


def extract_roi(volume, center: Sequence[int] | None = None, size: int = 50, side: str = "left") -> np.ndarray:
    """The ``size``-cube whose centre voxel is ``center`` (start = centre - size//2)."""
    arr = _array(volume)
    if center is None:
        center = hemisphere_centroid(arr.shape, side)
    start = [int(c) - size // 2 for c in center]
    for axis, (s, extent) in enumerate(zip(start, arr.shape)):
        if s < 0 or s + size > extent:
            raise DataError(f"ROI of size {size} at {tuple(center)} leaves the volume along axis {axis}")
    x, y, z = start
    return arr[x : x + size, y : y + size, z : z + size].copy()


def extract_slices(volume, axis: int = SAGITTAL, drop_each_end: int = 20, resize_to: int | None = 224) -> list[np.ndarray]:
    """RGB slices (3 x R x R) along ``axis`` with ``drop_each_end`` slices removed at both ends.

    Each slice is bilinearly resized to ``resize_to`` (``None`` keeps its size)
    and the grey values are replicated into three channels.
    """
    arr = _array(volume)
    extent = arr.shape[axis]
    if extent <= 2 * drop_each_end:
        raise DataError(f"axis extent {extent} leaves no slice after dropping {drop_each_end} at each end")
    out = []
    for i in range(drop_each_end, extent - drop_each_end):
        sl = np.take(arr, i, axis=axis).astype(np.float32)
        if resize_to is not None and sl.shape != (resize_to, resize_to):
            factors = (resize_to / sl.shape[0], resize_to / sl.shape[1])
            sl = ndimage.zoom(sl, factors, order=1, mode="nearest", grid_mode=True)
        out.append(np.repeat(sl[None], 3, axis=0))
    return out
