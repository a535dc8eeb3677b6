"""Pseudo low-resolution volumes and aligned training patch pairs"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from errors import ShapeError, ValidationError
from volumes.volume import Volume, thicken

logger = logging.getLogger(__name__)

MAX_THICKNESS_MM = 3.0
MIN_SLICES = 130
_SPACING_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FactorDecision:
    factor: int
    accepted: bool
    depth: int
    thickness_mm: float
    reason: str = ""


def pseudo_lr_factors(depth, spacing_mm, max_thickness_mm=MAX_THICKNESS_MM, min_slices=MIN_SLICES):
    """
    Decide which integer thickening factors are admissible

    Factors k = 2, 3, ... are accepted while k * spacing stays within
    ``max_thickness_mm`` and ``depth // k`` keeps at least ``min_slices``
    slices. Both limits only tighten as k grows, so the accepted factors are
    a prefix; the first rejected factor is reported with its reason.

    Returns:
        list[FactorDecision]: Accepted factors followed by the first rejection
    """
    if spacing_mm <= 0:
        raise ValidationError(f"spacing must be > 0, got {spacing_mm}")
    decisions = []
    k = 2
    while True:
        thickness = k * spacing_mm
        slices = depth // k
        if thickness > max_thickness_mm + _SPACING_TOLERANCE:
            decisions.append(FactorDecision(k, False, slices, thickness, f"{thickness:g} mm > {max_thickness_mm:g} mm"))
            return decisions
        if slices < min_slices:
            decisions.append(FactorDecision(k, False, slices, thickness, f"{slices} slices < {min_slices}"))
            return decisions
        decisions.append(FactorDecision(k, True, slices, thickness))
        k += 1


def make_pseudo_lr(v: Volume, max_thickness_mm=MAX_THICKNESS_MM, min_slices=MIN_SLICES):
    """
    Thicker-slice copies of a thin volume, one per admissible factor

    Each slice of a pseudo volume is the mean of its k constituent thin
    slices. The list is empty when no factor qualifies.
    """
    out = []
    for decision in pseudo_lr_factors(v.depth, v.spacing_mm[0], max_thickness_mm, min_slices):
        if decision.accepted:
            out.append(thicken(v, decision.factor, name=f"{v.name}@x{decision.factor}"))
        else:
            logger.debug("pseudo-LR factor %d rejected for %s: %s", decision.factor, v.name, decision.reason)
    return out


@dataclass(frozen=True)
class PatchSpec:
    """Low-resolution patch extent; the high-resolution patch is r times deeper"""

    depth: int = 4
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if min(self.depth, self.height, self.width) < 1:
            raise ValidationError(f"patch extents must be >= 1, got {self}")


@dataclass(frozen=True)
class Provenance:
    """Where a patch pair came from and what was done to it"""

    volume: str
    corner: Tuple[int, int, int]
    flipped: bool
    augmentations: Tuple[str, ...] = field(default_factory=tuple)

    def __str__(self):
        extras = ",".join(self.augmentations) or "none"
        return f"{self.volume} corner={self.corner} flip={self.flipped} aug={extras}"


@dataclass(frozen=True)
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    provenance: Provenance


def sample_patch_pair(
    lr: Volume,
    hr: Volume,
    patch: PatchSpec,
    rng,
    r=4,
    force_flip: Optional[bool] = None,
    corner: Optional[Tuple[int, int, int]] = None,
    augmentations: Tuple[str, ...] = (),
):
    """
    Crop aligned patches from a low/high-resolution pair

    The in-plane crop and the horizontal (W axis) flip are shared by both
    patches. LR slices [z0, z0 + d) map to HR slices [r*z0, r*(z0 + d)).

    Args:
        lr, hr: Normalized volumes with equal in-plane extents
        patch: LR patch extents
        rng: numpy Generator; draws corner then flip
        r: Depth factor between the two volumes
        force_flip: Override the flip draw
        corner: Override the corner draw with (z0, y0, x0)
        augmentations: Labels recorded in the provenance

    Raises:
        ShapeError: The patch does not fit inside the volumes
    """
    if lr.unit != "normalized" or hr.unit != "normalized":
        raise ValidationError("patch pairs are cut from normalized volumes")
    if lr.dims[1:] != hr.dims[1:]:
        raise ShapeError(f"in-plane extents differ: lr {lr.dims}, hr {hr.dims}")
    usable_depth = min(lr.depth, hr.depth // r)
    _, height, width = lr.dims
    if patch.depth > usable_depth or patch.height > height or patch.width > width:
        raise ShapeError(
            f"patch {patch.depth}x{patch.height}x{patch.width} does not fit volume {lr.name!r} "
            f"(usable {usable_depth}x{height}x{width})"
        )
    limits = (usable_depth - patch.depth, height - patch.height, width - patch.width)
    drawn = tuple(int(rng.integers(0, hi + 1)) for hi in limits)
    flip = bool(rng.random() < 0.5)
    if corner is not None:
        if any(c < 0 or c > hi for c, hi in zip(corner, limits)):
            raise ShapeError(f"corner {corner} outside the valid range {limits}")
        drawn = tuple(int(c) for c in corner)
    if force_flip is not None:
        flip = bool(force_flip)

    z0, y0, x0 = drawn
    rows = slice(y0, y0 + patch.height)
    cols = slice(x0, x0 + patch.width)
    lr_patch = lr.voxels[z0:z0 + patch.depth, rows, cols]
    hr_patch = hr.voxels[r * z0:r * (z0 + patch.depth), rows, cols]
    if flip:
        lr_patch = lr_patch[:, :, ::-1]
        hr_patch = hr_patch[:, :, ::-1]
    return PatchPair(
        lr=np.ascontiguousarray(lr_patch),
        hr=np.ascontiguousarray(hr_patch),
        provenance=Provenance(lr.name or "<volume>", drawn, flip, tuple(augmentations)),
    )


def stack_pairs(pairs: List[PatchPair]):
    """Batch patch pairs into ``[B, 1, d, h, w]`` and ``[B, 1, r*d, h, w]`` arrays"""
    lr = np.stack([p.lr for p in pairs])[:, None]
    hr = np.stack([p.hr for p in pairs])[:, None]
    return lr, hr
