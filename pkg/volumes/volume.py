"""Volume type, intensity normalization and the .vsrv file format

File layout:
    line 1   ``VSRV1``
    line 2   one-line JSON header
             {"dims": [D, H, W], "spacing_mm": [sz, sy, sx],
              "unit": "raw_hu" | "normalized", "dtype": "f32le"}
    payload  D*H*W little-endian float32 values, slice 0 first, row-major
"""

import json
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import ShapeError, ValidationError, VolumeFormatError
from storage import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b"VSRV1"
PAYLOAD_DTYPE = "f32le"
HU_MIN = -1024.0
HU_MAX = 2048.0
UNITS = ("raw_hu", "normalized")


@dataclass(frozen=True)
class Volume:
    """
    A D x H x W scalar volume with per-axis voxel spacing

    Attributes:
        voxels: float32 array ``[D, H, W]``
        spacing_mm: (sz, sy, sx), all positive
        unit: ``raw_hu`` or ``normalized``
        name: Free-form identifier used in provenance records
    """

    voxels: np.ndarray
    spacing_mm: Tuple[float, float, float]
    unit: str = "raw_hu"
    name: str = ""

    def __post_init__(self):
        voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise ShapeError(f"volume must be [D, H, W] with every extent >= 1, got {voxels.shape}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValidationError(f"spacing_mm must be three positive values, got {self.spacing_mm}")
        if self.unit not in UNITS:
            raise ValidationError(f"unknown intensity unit {self.unit!r}")
        if self.unit == "normalized" and not ((voxels >= 0.0) & (voxels <= 1.0)).all():
            raise ValidationError(
                f"normalized volume {self.name!r} has values outside [0, 1] "
                f"(range [{float(np.nanmin(voxels)):g}, {float(np.nanmax(voxels)):g}])"
            )
        voxels.setflags(write=False)
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def dims(self):
        return self.voxels.shape

    @property
    def depth(self):
        return self.voxels.shape[0]

    def replace(self, voxels=None, spacing_mm=None, unit=None, name=None):
        return Volume(
            self.voxels if voxels is None else voxels,
            self.spacing_mm if spacing_mm is None else spacing_mm,
            self.unit if unit is None else unit,
            self.name if name is None else name,
        )

    def summary(self):
        sz, sy, sx = self.spacing_mm
        lo, hi = float(self.voxels.min()), float(self.voxels.max())
        return (
            f"dims {self.dims[0]}x{self.dims[1]}x{self.dims[2]}  "
            f"spacing {sz:g}x{sy:g}x{sx:g} mm  unit {self.unit}  range [{lo:g}, {hi:g}]"
        )


def normalize(v: Volume):
    """Clamp HU to [-1024, 2048] and map linearly onto [0, 1]"""
    if v.unit != "raw_hu":
        raise ValidationError(f"normalize expects a raw_hu volume, got {v.unit}")
    scaled = (np.clip(v.voxels.astype(np.float64), HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)
    return v.replace(voxels=scaled.astype(np.float32), unit="normalized")


def denormalize(v: Volume):
    """Inverse of normalize on the clamped range"""
    if v.unit != "normalized":
        raise ValidationError(f"denormalize expects a normalized volume, got {v.unit}")
    hu = v.voxels.astype(np.float64) * (HU_MAX - HU_MIN) + HU_MIN
    return v.replace(voxels=hu.astype(np.float32), unit="raw_hu")


def slab_mean(voxels, k):
    """
    Average consecutive groups of ``k`` slices

    Slice j of the result is the mean of slices [k*j, k*j + k); trailing
    slices that do not fill a whole slab are dropped.
    """
    if k < 1:
        raise ValidationError(f"slab factor must be >= 1, got {k}")
    depth = voxels.shape[0] // k
    if depth < 1:
        raise ShapeError(f"cannot form a {k}-slice slab from {voxels.shape[0]} slices")
    slabs = np.asarray(voxels[: depth * k], dtype=np.float64).reshape((depth, k) + voxels.shape[1:])
    return slabs.mean(axis=1).astype(np.float32)


def thicken(v: Volume, k, name=None):
    """A volume of k-slice slab means with spacing k*sz"""
    sz, sy, sx = v.spacing_mm
    return v.replace(voxels=slab_mean(v.voxels, k), spacing_mm=(sz * k, sy, sx), name=name)


def write_volume(v: Volume, path):
    """Write ``v`` to ``path`` atomically"""
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing_mm),
        "unit": v.unit,
        "dtype": PAYLOAD_DTYPE,
    }
    with atomic_write(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        f.write(v.voxels.astype("<f4", copy=False).tobytes())
    logger.debug("Wrote volume %s (%s)", path, v.summary())


def _parse_header(path, line):
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"{path}: unreadable header ({e})") from e
    if not isinstance(header, dict):
        raise VolumeFormatError(f"{path}: header is not an object")
    dims = header.get("dims")
    spacing = header.get("spacing_mm")
    if not isinstance(dims, list) or len(dims) != 3 or not all(isinstance(n, int) and n >= 1 for n in dims):
        raise VolumeFormatError(f"{path}: dims must be three positive integers, got {dims!r}")
    if not isinstance(spacing, list) or len(spacing) != 3:
        raise VolumeFormatError(f"{path}: spacing_mm must have three entries, got {spacing!r}")
    if not all(isinstance(s, (int, float)) and s > 0 for s in spacing):
        raise VolumeFormatError(f"{path}: spacing_mm must be positive, got {spacing!r}")
    if header.get("unit") not in UNITS:
        raise VolumeFormatError(f"{path}: unknown unit {header.get('unit')!r}")
    if header.get("dtype") != PAYLOAD_DTYPE:
        raise VolumeFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    return header


def read_volume(path, name=None):
    """
    Read a .vsrv file

    Raises:
        VolumeFormatError: Bad magic, malformed header, non-positive spacing,
            or a payload whose size disagrees with the header dims
    """
    with open(path, "rb") as f:
        magic = f.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise VolumeFormatError(f"{path}: bad magic {magic[:16]!r}")
        header = _parse_header(path, f.readline())
        payload = f.read()
    dims = tuple(header["dims"])
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload size mismatch, header dims {list(dims)} need {expected} bytes "
            f"({expected // 4} values), found {len(payload)} bytes"
        )
    voxels = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if name is None:
        name = str(path)
    return Volume(voxels.astype(np.float32), tuple(header["spacing_mm"]), header["unit"], name)
