"""Procedural chest-like phantoms: a smooth background with ellipsoids and tubes"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from errors import ValidationError
from volumes.volume import Volume, thicken

logger = logging.getLogger(__name__)

PHANTOM_HU_MIN = -1000.0
PHANTOM_HU_MAX = 400.0
MIN_EXTENT = 16


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid; center and radii in voxels, (z, y, x) order"""

    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]
    value: float

    def mask(self, grid):
        zz, yy, xx = grid
        cz, cy, cx = self.center
        rz, ry, rx = self.radii
        return ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


@dataclass(frozen=True)
class Tube:
    """Straight cylinder of ``radius`` voxels around the segment start-end"""

    start: Tuple[float, float, float]
    end: Tuple[float, float, float]
    radius: float
    value: float

    def mask(self, grid):
        zz, yy, xx = grid
        a = np.asarray(self.start, dtype=np.float64)
        axis = np.asarray(self.end, dtype=np.float64) - a
        length2 = float(axis @ axis)
        dz, dy, dx = zz - a[0], yy - a[1], xx - a[2]
        if length2 == 0.0:
            t = 0.0
        else:
            t = np.clip((dz * axis[0] + dy * axis[1] + dx * axis[2]) / length2, 0.0, 1.0)
        dist2 = (dz - t * axis[0]) ** 2 + (dy - t * axis[1]) ** 2 + (dx - t * axis[2]) ** 2
        return dist2 <= self.radius ** 2


Shape = Union[Ellipsoid, Tube]


@dataclass(frozen=True)
class PhantomSpec:
    """
    Recipe for one phantom pair

    Sizes are in voxels. With ``shapes`` set, those shapes are drawn instead
    of random ones; later shapes overwrite earlier ones.
    """

    seed: int = 0
    dims: Tuple[int, int, int] = (64, 64, 64)
    thin_spacing_mm: float = 1.0
    inplane_spacing_mm: float = 1.0
    thick_spacing_mm: float = 4.0
    n_ellipsoids: int = 6
    ellipsoid_radius: Tuple[float, float] = (4.0, 16.0)
    n_tubes: int = 4
    tube_radius: Tuple[float, float] = (1.0, 3.0)
    background_hu: float = -700.0
    background_amplitude: float = 150.0
    background_smoothness: float = 6.0
    noise_sigma: float = 10.0
    shapes: Tuple[Shape, ...] = field(default_factory=tuple)

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < MIN_EXTENT:
            raise ValidationError(f"phantom dims must all be >= {MIN_EXTENT}, got {self.dims}")
        if self.n_ellipsoids < 0 or self.n_tubes < 0:
            raise ValidationError("phantom shape counts must be >= 0")
        if min(self.thin_spacing_mm, self.inplane_spacing_mm, self.thick_spacing_mm) <= 0:
            raise ValidationError("phantom spacings must be > 0")
        if self.thick_factor < 1:
            raise ValidationError(
                f"thick spacing {self.thick_spacing_mm} mm is thinner than thin spacing {self.thin_spacing_mm} mm"
            )
        for lo, hi in (self.ellipsoid_radius, self.tube_radius):
            if not 0 < lo <= hi:
                raise ValidationError(f"size range ({lo}, {hi}) must satisfy 0 < low <= high")
        if self.noise_sigma < 0 or self.background_smoothness < 0 or self.background_amplitude < 0:
            raise ValidationError("noise sigma, background smoothness and amplitude must be >= 0")
        return self

    @property
    def thick_factor(self):
        return int(round(self.thick_spacing_mm / self.thin_spacing_mm))

    def to_dict(self):
        values = asdict(self)
        values.pop("shapes")
        return values

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)} - {"shapes"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown phantom keys: {', '.join(unknown)}")
        coerced = dict(values)
        for key in ("dims", "ellipsoid_radius", "tube_radius"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced).validate()


def _random_shapes(spec: PhantomSpec, rng):
    depth, height, width = spec.dims
    extent = np.array(spec.dims, dtype=np.float64)
    shapes = []
    for _ in range(spec.n_ellipsoids):
        center = tuple(rng.uniform(0.2, 0.8, size=3) * extent)
        radii = tuple(rng.uniform(*spec.ellipsoid_radius, size=3))
        shapes.append(Ellipsoid(center, radii, float(rng.uniform(-900.0, 300.0))))
    for _ in range(spec.n_tubes):
        # tubes run roughly head to foot, like airways and vessels
        start = (0.0, rng.uniform(0.1, 0.9) * height, rng.uniform(0.1, 0.9) * width)
        end = (depth - 1.0, rng.uniform(0.1, 0.9) * height, rng.uniform(0.1, 0.9) * width)
        radius = float(rng.uniform(*spec.tube_radius))
        value = -1000.0 if rng.random() < 0.5 else float(rng.uniform(40.0, 300.0))
        shapes.append(Tube(start, end, radius, value))
    return shapes


def _background(spec: PhantomSpec, rng):
    field_ = rng.standard_normal(spec.dims)
    if spec.background_smoothness > 0:
        field_ = gaussian_filter(field_, sigma=spec.background_smoothness, mode="reflect")
    std = field_.std()
    if std > 0:
        field_ = field_ / std
    return spec.background_hu + spec.background_amplitude * field_


def generate_phantom(spec: PhantomSpec):
    """
    Build a thin volume and its thick counterpart

    The thin volume is background + shapes + Gaussian noise, clipped to
    [-1000, 400] HU. The thick volume is its slab mean over
    ``spec.thick_factor`` slices. The same spec always gives the same bytes.

    Returns:
        (thin Volume, thick Volume), both raw_hu
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    voxels = _background(spec, rng)
    shapes = list(spec.shapes) if spec.shapes else _random_shapes(spec, rng)
    grid = np.ogrid[: spec.dims[0], : spec.dims[1], : spec.dims[2]]
    for shape in shapes:
        voxels[shape.mask(grid)] = shape.value
    if spec.noise_sigma > 0:
        voxels = voxels + rng.normal(0.0, spec.noise_sigma, size=spec.dims)
    voxels = np.clip(voxels, PHANTOM_HU_MIN, PHANTOM_HU_MAX)

    spacing = (spec.thin_spacing_mm, spec.inplane_spacing_mm, spec.inplane_spacing_mm)
    thin = Volume(voxels.astype(np.float32), spacing, "raw_hu", name=f"phantom-{spec.seed}")
    thick = thicken(thin, spec.thick_factor, name=f"phantom-{spec.seed}-thick")
    logger.debug("Generated phantom seed=%d with %d shapes", spec.seed, len(shapes))
    return thin, thick
