"""Image quality metrics and the reports built from them

Report text format, one JSON object per line:

    {"report": <kind>, "label": <str>, "count": <int>}           header
    {"pair": <i>, "sr": <name>, "hr": <name>, "psnr": <dB>, "ssim": <v>}
    {"summary": "psnr" | "ssim", "mean", "std", "lower", "upper", "n", "identical"}

Eval reports carry one header, their pair lines, then the psnr and ssim
summaries. Slice-similarity reports carry one header and one line per
distance group. A PSNR of identical inputs is written as the string
``"identical"``.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import correlate1d

from errors import ShapeError, ValidationError
from volumes.volume import Volume

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class _Identical:
    """PSNR of two identical inputs, where the MSE is zero"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "IDENTICAL"

    def __str__(self):
        return "identical"

    def __reduce__(self):
        return (_Identical, ())


IDENTICAL = _Identical()
Decibels = Union[float, _Identical]


def as_db(value: Decibels):
    """PSNR as a float, with identical inputs mapped to +inf"""
    return math.inf if value is IDENTICAL else float(value)


def _voxels(x):
    return x.voxels if isinstance(x, Volume) else np.asarray(x)


def psnr(a, b, max_val=1.0) -> Decibels:
    """
    Peak signal-to-noise ratio in dB

    Returns IDENTICAL instead of a number when the inputs are equal.
    """
    a, b = _voxels(a), _voxels(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _fit_window(height, width, window):
    smallest = min(height, width)
    if smallest >= window:
        return window
    fitted = smallest if smallest % 2 else smallest - 1
    logger.warning("SSIM window %d exceeds the %dx%d slice; using %d", window, height, width, fitted)
    return fitted


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA, data_range=1.0):
    """
    Mean structural similarity of the axial slices of ``a`` and ``b``

    Each slice is filtered with a separable Gaussian window and only the
    region where the window fits entirely is scored. The per-slice means are
    averaged over slices. Slices smaller than the window shrink it to the
    largest odd size that fits, with a logged warning.
    """
    a, b = _voxels(a), _voxels(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects [H, W] or [D, H, W], got {a.shape}")
    if np.array_equal(a, b):
        return 1.0
    _, height, width = a.shape
    window = _fit_window(height, width, window)
    kernel = gaussian_window(window, sigma)
    half = window // 2

    def blur(x):
        x = correlate1d(x, kernel, axis=1, mode="constant")
        x = correlate1d(x, kernel, axis=2, mode="constant")
        return x[:, half:height - half, half:width - half]

    a = a.astype(np.float64)
    b = b.astype(np.float64)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(np.mean(score.mean(axis=(1, 2))))


# Reports


@dataclass
class Summary:
    """
    Mean, sample std and 2.5/97.5 percentile interval of a set of values

    ``identical`` counts PSNR values that were IDENTICAL; they are left out of
    the statistics, and a set made only of them has mean IDENTICAL.
    """

    mean: Optional[Decibels]
    std: float
    lower: Optional[float]
    upper: Optional[float]
    n: int
    identical: int = 0

    @classmethod
    def of(cls, values: Sequence[Decibels]):
        finite = np.array([v for v in values if v is not IDENTICAL], dtype=np.float64)
        identical = len(values) - finite.size
        if finite.size == 0:
            return cls(IDENTICAL if identical else None, 0.0, None, None, len(values), identical)
        mean = float(finite.mean())
        std = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
        lower, upper = (float(p) for p in np.percentile(finite, [2.5, 97.5]))
        # a heavy tail can drag the mean past a percentile bound
        return cls(mean, std, min(lower, mean), max(upper, mean), len(values), identical)

    def to_dict(self):
        return {
            "mean": _encode(self.mean), "std": self.std, "lower": self.lower, "upper": self.upper,
            "n": self.n, "identical": self.identical,
        }

    @classmethod
    def from_dict(cls, values):
        return cls(_decode(values["mean"]), values["std"], values["lower"], values["upper"], values["n"], values["identical"])

    def describe(self, digits=3):
        if self.mean is None:
            return "absent"
        if self.mean is IDENTICAL:
            return "identical"
        return f"{self.mean:.{digits}f} ± {self.std:.{digits}f} [{self.lower:.{digits}f}, {self.upper:.{digits}f}]"


def _encode(value):
    return str(IDENTICAL) if value is IDENTICAL else value


def _decode(value):
    return IDENTICAL if value == str(IDENTICAL) else value


@dataclass
class PairMetrics:
    sr: str
    hr: str
    psnr: Decibels
    ssim: float


@dataclass
class EvalReport:
    label: str
    pairs: List[PairMetrics]
    psnr: Summary
    ssim: Summary

    def to_lines(self):
        lines = [json.dumps({"report": "eval", "label": self.label, "count": len(self.pairs)})]
        for i, p in enumerate(self.pairs):
            lines.append(json.dumps({"pair": i, "sr": p.sr, "hr": p.hr, "psnr": _encode(p.psnr), "ssim": p.ssim}))
        lines.append(json.dumps({"summary": "psnr", **self.psnr.to_dict()}))
        lines.append(json.dumps({"summary": "ssim", **self.ssim.to_dict()}))
        return lines

    def table_row(self):
        return f"{self.label:<18} PSNR {self.psnr.describe()}   SSIM {self.ssim.describe(4)}"


def evaluate_set(pairs: Sequence[Tuple[Volume, Volume]], label="model"):
    """Per-pair PSNR and SSIM plus their summaries"""
    if not pairs:
        raise ValidationError("evaluate_set needs at least one (sr, hr) pair")
    rows = []
    for sr, hr in pairs:
        rows.append(PairMetrics(
            sr=getattr(sr, "name", ""), hr=getattr(hr, "name", ""), psnr=psnr(sr, hr), ssim=ssim(sr, hr),
        ))
    return EvalReport(
        label=label,
        pairs=rows,
        psnr=Summary.of([r.psnr for r in rows]),
        ssim=Summary.of([r.ssim for r in rows]),
    )


@dataclass
class GroupResult:
    """Similarity of thick slices to thin slices at one physical distance"""

    name: str
    offset_mm: float
    psnr: Summary
    ssim: Summary
    skipped: int = 0

    @property
    def present(self):
        return self.psnr.n > 0


@dataclass
class SliceSimilarityReport:
    groups: Dict[str, GroupResult] = field(default_factory=dict)
    label: str = "slice-similarity"

    def to_lines(self):
        lines = [json.dumps({"report": "slice-similarity", "label": self.label, "count": len(self.groups)})]
        for g in self.groups.values():
            lines.append(json.dumps({
                "group": g.name, "offset_mm": g.offset_mm, "skipped": g.skipped,
                "psnr": g.psnr.to_dict(), "ssim": g.ssim.to_dict(),
            }))
        return lines


SIMILARITY_GROUPS = (("match", 0.0), ("near", 1.0), ("far", 2.0))


def slice_similarity_study(thick: Volume, thin: Volume, groups=SIMILARITY_GROUPS):
    """
    Compare each thick slice with thin slices at growing physical distance

    Thick slice j is matched to thin slice k*j + (k-1)//2, the thin slice at
    its slab center, where k is the spacing ratio. The other groups take the
    thin slices that far above and below the match. Comparisons falling
    outside the thin volume are skipped and counted. A group whose distance
    is not a whole number of thin slices is reported absent.
    """
    if thick.dims[1:] != thin.dims[1:]:
        raise ShapeError(f"in-plane extents differ: thick {thick.dims}, thin {thin.dims}")
    thin_sz = thin.spacing_mm[0]
    ratio = thick.spacing_mm[0] / thin_sz
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-6:
        raise ValidationError(f"thin spacing {thin_sz} mm does not divide thick spacing {thick.spacing_mm[0]} mm")

    report = SliceSimilarityReport()
    for name, offset_mm in groups:
        exact = offset_mm / thin_sz
        steps = int(round(exact))
        if abs(exact - steps) > 1e-6:
            logger.warning(
                "Slice group %s (%g mm) is not a whole number of %g mm thin slices; skipped", name, offset_mm, thin_sz
            )
            report.groups[name] = GroupResult(name, offset_mm, Summary.of([]), Summary.of([]), 2 * thick.depth)
            continue
        offsets = (0,) if steps == 0 else (-steps, steps)
        psnrs, ssims, skipped = [], [], 0
        for j in range(thick.depth):
            match = k * j + (k - 1) // 2
            for off in offsets:
                idx = match + off
                if not 0 <= idx < thin.depth:
                    skipped += 1
                    continue
                psnrs.append(psnr(thick.voxels[j], thin.voxels[idx]))
                ssims.append(ssim(thick.voxels[j], thin.voxels[idx]))
        if not psnrs:
            logger.warning("Slice group %s (%g mm) has no comparisons inside the thin volume", name, offset_mm)
        report.groups[name] = GroupResult(name, offset_mm, Summary.of(psnrs), Summary.of(ssims), skipped)
    return report


def format_reports(reports):
    return "\n".join(line for report in reports for line in report.to_lines()) + "\n"


def parse_reports(text):
    """Inverse of format_reports"""
    reports = []
    current = None
    for raw in text.splitlines():
        if not raw.strip():
            continue
        record = json.loads(raw)
        if "report" in record:
            if record["report"] == "eval":
                current = EvalReport(record["label"], [], None, None)
            elif record["report"] == "slice-similarity":
                current = SliceSimilarityReport(label=record["label"])
            else:
                raise ValidationError(f"unknown report kind {record['report']!r}")
            reports.append(current)
        elif current is None:
            raise ValidationError("report line before any header")
        elif "pair" in record:
            current.pairs.append(PairMetrics(record["sr"], record["hr"], _decode(record["psnr"]), record["ssim"]))
        elif "summary" in record:
            setattr(current, record["summary"], Summary.from_dict(record))
        elif "group" in record:
            current.groups[record["group"]] = GroupResult(
                record["group"], record["offset_mm"],
                Summary.from_dict(record["psnr"]), Summary.from_dict(record["ssim"]), record["skipped"],
            )
    return reports
