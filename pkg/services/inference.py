"""Sliding-window volumetric inference with overlap averaging"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Protocol, Sequence, Tuple

import numpy as np

from errors import ShapeError, ValidationError
from volumes.volume import Volume, normalize

logger = logging.getLogger(__name__)


class Predictor(Protocol):
    def predict(self, window: np.ndarray) -> np.ndarray:
        """Map a ``[d, H, W]`` window to ``[r*d, H, W]``"""


@dataclass(frozen=True)
class InferenceSpec:
    """Sliding-window layout along depth"""

    window_depth: int = 4
    overlap: int = 1
    upsample: int = 4
    workers: int = 1

    def validate(self):
        if self.window_depth < 1:
            raise ValidationError(f"infer.window_depth must be >= 1, got {self.window_depth}")
        if not 0 <= self.overlap < self.window_depth:
            raise ValidationError(
                f"infer.overlap must satisfy 0 <= overlap < window_depth, got {self.overlap}"
            )
        if self.upsample < 1:
            raise ValidationError(f"infer.upsample must be >= 1, got {self.upsample}")
        if self.workers < 1:
            raise ValidationError(f"infer.workers must be >= 1, got {self.workers}")
        return self

    @property
    def stride(self):
        return self.window_depth - self.overlap


def window_starts(depth, spec: InferenceSpec):
    """Start slices of the windows that together cover ``[0, depth)``"""
    starts = [0]
    while starts[-1] + spec.window_depth < depth:
        starts.append(starts[-1] + spec.stride)
    return starts


def extract_windows(v: Volume, spec: InferenceSpec) -> List[Tuple[np.ndarray, int]]:
    """
    Cut ``v`` into depth windows of ``spec.window_depth`` slices

    Windows start every ``depth - overlap`` slices. A window running past the
    last slice is filled by repeating the last slice.
    """
    spec.validate()
    voxels = v.voxels
    last = v.depth - 1
    windows = []
    for start in window_starts(v.depth, spec):
        indices = np.minimum(np.arange(start, start + spec.window_depth), last)
        windows.append((voxels[indices], start))
    return windows


def assemble(outputs: Sequence[np.ndarray], starts: Sequence[int], source: Volume, spec: InferenceSpec):
    """
    Average overlapping window predictions into one volume

    The window at start i covers output slices [r*i, r*(i + depth)); slices
    past ``r * source.depth`` come from padding and are dropped. Windows are
    accumulated in ascending start order in float64, so the result is
    bit-identical whatever order the predictions were produced in.

    Returns:
        Volume: ``r * D`` slices, depth spacing divided by r, normalized and
            clamped to [0, 1]
    """
    if len(outputs) != len(starts):
        raise ShapeError(f"{len(outputs)} window outputs for {len(starts)} starts")
    r = spec.upsample
    _, height, width = source.dims
    out_depth = r * source.depth
    total = np.zeros((out_depth, height, width), dtype=np.float64)
    count = np.zeros(out_depth, dtype=np.int64)
    expected = (r * spec.window_depth, height, width)
    for start, output in sorted(zip(starts, outputs), key=lambda item: item[0]):
        output = np.asarray(output)
        if output.shape != expected:
            raise ShapeError(f"window at start {start} produced {output.shape}, expected {expected}")
        lo = r * start
        hi = min(r * (start + spec.window_depth), out_depth)
        total[lo:hi] += output[: hi - lo]
        count[lo:hi] += 1
    if np.any(count == 0):
        missing = int(np.flatnonzero(count == 0)[0])
        raise ShapeError(f"output slice {missing} is not covered by any window")
    voxels = np.clip(total / count[:, None, None], 0.0, 1.0).astype(np.float32)
    sz, sy, sx = source.spacing_mm
    return Volume(voxels, (sz / r, sy, sx), "normalized", name=f"{source.name}-sr")


def infer(model: Predictor, v: Volume, spec: InferenceSpec):
    """
    Super-resolve a whole volume

    Raw volumes are normalized first. With ``spec.workers > 1`` windows are
    predicted concurrently; the model must only read its parameters.
    """
    spec.validate()
    if v.unit == "raw_hu":
        v = normalize(v)
    windows = extract_windows(v, spec)
    starts = [start for _, start in windows]
    logger.info("Inferring %d windows of %d slices with %d worker(s)", len(windows), spec.window_depth, spec.workers)
    if spec.workers > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=spec.workers, thread_name_prefix="infer") as pool:
            outputs = list(pool.map(model.predict, [w for w, _ in windows]))
    else:
        outputs = [model.predict(w) for w, _ in windows]
    return assemble(outputs, starts, v, spec)


def _catmull_rom_weights(t):
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )


def baseline_interpolate(v: Volume, r):
    """
    Catmull-Rom interpolation along depth at r times the slice density

    Output slice t sits at thick-slice coordinate (t + 0.5) / r - 0.5, the
    same slab-center geometry the network is trained on. The two samples
    beyond each end are extrapolated linearly, so linear depth ramps are
    reproduced. Values are clamped to [0, 1]. A single-slice volume is
    repeated r times with a warning.
    """
    if r < 1:
        raise ValidationError(f"upsample factor must be >= 1, got {r}")
    if v.unit == "raw_hu":
        v = normalize(v)
    src = v.voxels.astype(np.float64)
    depth = v.depth
    sz, sy, sx = v.spacing_mm
    spacing = (sz / r, sy, sx)
    if depth < 2:
        logger.warning("Volume %s has %d slice; baseline falls back to slice repetition", v.name, depth)
        return Volume(np.repeat(src, r, axis=0).astype(np.float32), spacing, "normalized", name=f"{v.name}-repeat")

    first, second = src[0], src[1]
    last, before_last = src[-1], src[-2]
    extended = np.concatenate([
        (3.0 * first - 2.0 * second)[None],
        (2.0 * first - second)[None],
        src,
        (2.0 * last - before_last)[None],
        (3.0 * last - 2.0 * before_last)[None],
    ])
    u = (np.arange(r * depth) + 0.5) / r - 0.5
    base = np.floor(u).astype(np.int64)
    weights = _catmull_rom_weights(u - base)
    out = np.zeros((r * depth,) + src.shape[1:], dtype=np.float64)
    for k, w in enumerate(weights):
        out += w[:, None, None] * extended[base - 1 + k + 2]
    out = np.clip(out, 0.0, 1.0)
    return Volume(out.astype(np.float32), spacing, "normalized", name=f"{v.name}-cubic")
