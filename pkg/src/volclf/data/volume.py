"""3D volumes, the VOL3D file format and MinMax rescaling.

VOL3D v1 is four text lines (``VOL3D 1``, ``dims dx dy dz``,
``voxel_mm vx vy vz``, ``data``) followed by ``dx*dy*dz`` little-endian
float32 values in C order, i.e. linear index ``x*(dy*dz) + y*dz + z``.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from volclf.errors import DataError, FormatError

MAGIC = b"VOL3D 1"


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    voxel_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    provenance: str = ""

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DataError(f"volume must be 3D, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError(f"volume {self.provenance or '<memory>'} contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def write_volume(path: str | os.PathLike, volume: Volume) -> None:
    dx, dy, dz = volume.shape
    vx, vy, vz = volume.voxel_mm
    header = f"VOL3D 1\ndims {dx} {dy} {dz}\nvoxel_mm {vx!r} {vy!r} {vz!r}\ndata\n".encode("ascii")
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)


def read_volume(path: str | os.PathLike) -> Volume:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 4)
    if len(parts) < 5 or parts[0] != MAGIC:
        raise FormatError(f"{path}: not a VOL3D v1 file")
    try:
        tag, *dims = parts[1].decode("ascii").split()
        vtag, *vox = parts[2].decode("ascii").split()
        if tag != "dims" or vtag != "voxel_mm" or parts[3] != b"data" or len(dims) != 3 or len(vox) != 3:
            raise ValueError("malformed header")
        shape = tuple(int(d) for d in dims)
        voxel = tuple(float(v) for v in vox)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if min(shape) < 1:
        raise FormatError(f"{path}: non-positive dims {shape}")
    payload = parts[4]
    expected = 4 * shape[0] * shape[1] * shape[2]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, dims need {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    try:
        return Volume(data, voxel, str(path))
    except DataError as exc:
        raise FormatError(str(exc)) from exc


def minmax_rescale(volume: Volume) -> Volume:
    """Affine map of the volume onto [0, 1]; a constant volume becomes zeros."""
    data = volume.data
    if np.isnan(data).any():
        raise DataError("cannot rescale a volume containing NaN")
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        warnings.warn(f"constant volume {volume.provenance or '<memory>'} rescaled to zeros", RuntimeWarning, stacklevel=2)
        out = np.zeros_like(data)
    else:
        out = ((data.astype(np.float64) - lo) / (hi - lo)).astype(data.dtype)
    return Volume(out, volume.voxel_mm, volume.provenance)
