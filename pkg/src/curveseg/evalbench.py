"""Metrics, baselines and the synthetic sherd/design generator.

The real excavated-sherd scans are not distributable, so benchmarking runs
on synthetic data that reproduces their failure modes: stamped strokes
are locally parallel smooth curves; the stamp sits on a gently undulating
base surface (poor paddle fit); weathering is modelled as Gaussian
smoothing plus additive Gaussian depth noise.  Designs are generated from
a seed, sherds are rigid crops of a design with a recorded ground-truth
placement, so segmentation (precision / recall / F-measure) and design
matching (CMC) can both be scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import imagecore
from .errors import DimError, ParamError
from .imagecore import DepthImage
from .matching import PointSet, RigidTransform
from .skeleton import SkeletonSet

STROKE_STEP_MM = 0.25  # sampling step along stroke centre lines


# ---------------------------------------------------------------------------
# Precision / recall / F-measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrfScore:
    precision: float
    recall: float
    f_measure: float

    def __post_init__(self):
        for name in ("precision", "recall", "f_measure"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParamError(f"{name} must be in [0, 1], got {v}")


def _f_measure(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def prf(pred: np.ndarray, gt: np.ndarray) -> PrfScore:
    """Pixelwise precision, recall and F-measure of a binary segmentation.

    Empty prediction and empty truth count as a perfect (1, 1, 1); an
    empty prediction against a non-empty truth (or vice versa) scores
    (0, 0, 0).
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    tp = float(np.count_nonzero(pred & gt))
    if not pred.any() and not gt.any():
        return PrfScore(1.0, 1.0, 1.0)
    p = tp / np.count_nonzero(pred) if pred.any() else 0.0
    r = tp / np.count_nonzero(gt) if gt.any() else 0.0
    return PrfScore(p, r, _f_measure(p, r))


def average_prf(scores: list[PrfScore]) -> PrfScore:
    """Arithmetic mean of each field over per-image scores.

    The mean F is the mean of the per-image F values, not the harmonic
    mean of the averaged precision and recall; the two differ, which is
    visible when published per-image-averaged tables are recomputed.
    """
    if not scores:
        raise ParamError("cannot average an empty score list")
    return PrfScore(
        float(np.mean([s.precision for s in scores])),
        float(np.mean([s.recall for s in scores])),
        float(np.mean([s.f_measure for s in scores])),
    )


def pooled_prf(pairs: list[tuple[np.ndarray, np.ndarray]]) -> PrfScore:
    """Single score from pooled pixel counts across all images."""
    if not pairs:
        raise ParamError("cannot pool an empty image list")
    tp = fp = fn = 0
    for pred, gt in pairs:
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise DimError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        tp += int(np.count_nonzero(pred & gt))
        fp += int(np.count_nonzero(pred & ~gt))
        fn += int(np.count_nonzero(~pred & gt))
    if tp + fp + fn == 0:
        return PrfScore(1.0, 1.0, 1.0)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return PrfScore(p, r, _f_measure(p, r))


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def dog_baseline(
    depth: DepthImage,
    ksize: int = 45,
    sigma_narrow: float = 5.0,
    sigma_wide: float = 11.0,
    threshold_levels: float = 1.0,
) -> np.ndarray:
    """Difference-of-Gaussians segmentation baseline.

    Both filters use 45-tap kernels with deviations 5 and 11; the narrow
    minus wide difference is positive where curves are deeper, and the
    curve map keeps pixels at or above ``threshold_levels`` grey levels
    (one level by default, converted to mm via the image's depth scale).
    """
    narrow = imagecore.gaussian_blur(depth.data, sigma_narrow, ksize)
    wide = imagecore.gaussian_blur(depth.data, sigma_wide, ksize)
    return (narrow - wide) >= threshold_levels * depth.depth_scale


def dilate_ablation(p: SkeletonSet, radius: int = 15) -> np.ndarray:
    """Width recovery replaced by a fixed-radius Euclidean dilation."""
    mask = p.to_mask()
    if not mask.any():
        return mask
    return imagecore.distance_transform(mask) <= radius


# ---------------------------------------------------------------------------
# Synthetic designs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignParams:
    """Geometry ranges for one generated design (all lengths in mm)."""

    canvas_mm: float = 50.0
    n_strokes: int = 6
    spacing_range: tuple[float, float] = (4.0, 6.0)
    width_range: tuple[float, float] = (0.25, 0.75)
    amp1_range: tuple[float, float] = (1.0, 3.5)
    amp2_range: tuple[float, float] = (0.3, 1.2)
    freq1_range: tuple[float, float] = (0.6, 1.4)
    freq2_range: tuple[float, float] = (1.8, 3.2)
    offset_jitter: float = 0.5
    cross_prob: float = 0.5

    def __post_init__(self):
        if self.n_strokes < 1:
            raise ParamError("designs need at least one stroke")
        if self.width_range[0] < 0.1:
            raise ParamError("stroke widths must be at least 0.1 mm")


@dataclass(frozen=True)
class Design:
    """A full stamp pattern: stroke centre lines plus per-stroke widths."""

    label: str
    seed: int
    canvas_mm: float
    strokes: tuple[tuple[np.ndarray, float], ...]

    def skeleton_points(self) -> PointSet:
        pts = np.concatenate([s for s, _ in self.strokes], axis=0)
        return PointSet(points=pts, label=self.label)

    def raster_mask(self, pitch: float = 0.5) -> np.ndarray:
        """Rasterised centre lines on the canvas grid."""
        n = int(round(self.canvas_mm / pitch)) + 1
        mask = np.zeros((n, n), dtype=bool)
        pts = np.concatenate([s for s, _ in self.strokes], axis=0)
        grid = np.rint(pts / pitch).astype(np.int64)
        keep = (grid[:, 0] >= 0) & (grid[:, 0] < n) & (grid[:, 1] >= 0) & (grid[:, 1] < n)
        grid = grid[keep]
        mask[grid[:, 1], grid[:, 0]] = True
        return mask


def _stroke_family(rng: np.random.Generator, params: DesignParams, n_strokes: int,
                   angle: float) -> list[np.ndarray]:
    """Locally parallel smooth strokes sharing one wavy base path."""
    canvas = params.canvas_mm
    centre = np.array([canvas / 2.0, canvas / 2.0])
    direction = np.array([math.cos(angle), math.sin(angle)])
    normal = np.array([-direction[1], direction[0]])
    spacing = rng.uniform(*params.spacing_range)
    a1 = rng.uniform(*params.amp1_range)
    a2 = rng.uniform(*params.amp2_range)
    f1 = rng.uniform(*params.freq1_range)
    f2 = rng.uniform(*params.freq2_range)
    ph1 = rng.uniform(0.0, 2.0 * math.pi)
    ph2 = rng.uniform(0.0, 2.0 * math.pi)
    length = canvas * 1.5
    t = np.arange(-length / 2.0, length / 2.0 + STROKE_STEP_MM, STROKE_STEP_MM)
    wave = a1 * np.sin(2.0 * math.pi * f1 * t / length + ph1)
    wave = wave + a2 * np.sin(2.0 * math.pi * f2 * t / length + ph2)
    strokes = []
    for j in range(n_strokes):
        offset = (j - (n_strokes - 1) / 2.0) * spacing + rng.uniform(
            -params.offset_jitter, params.offset_jitter
        )
        pts = centre + np.outer(t, direction) + np.outer(wave + offset, normal)
        inside = (
            (pts[:, 0] >= 0.0) & (pts[:, 0] <= canvas)
            & (pts[:, 1] >= 0.0) & (pts[:, 1] <= canvas)
        )
        pts = pts[inside]
        if len(pts):
            strokes.append(pts)
    return strokes


def synth_design(seed: int, params: DesignParams | None = None) -> Design:
    """Deterministic design: one (optionally two crossing) parallel stroke
    families with per-stroke widths."""
    params = params or DesignParams()
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0.0, math.pi)
    paths = _stroke_family(rng, params, params.n_strokes, angle)
    if rng.uniform() < params.cross_prob:
        cross = angle + rng.uniform(math.radians(55.0), math.radians(90.0))
        paths += _stroke_family(rng, params, max(params.n_strokes // 2, 2), cross)
    widths = rng.uniform(*params.width_range, size=len(paths))
    strokes = tuple((p, float(w)) for p, w in zip(paths, widths))
    if not strokes:
        raise ParamError(f"design seed {seed} produced no in-canvas strokes")
    return Design(label=f"design{seed:04d}", seed=seed, canvas_mm=params.canvas_mm,
                  strokes=strokes)


# ---------------------------------------------------------------------------
# Synthetic sherds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Depth-model knobs of one synthetic sherd scan."""

    seed: int = 0
    size_px: int = 200
    pitch: float = 0.1  # mm per pixel
    stamp_depth: float = 1.0  # mm of extra depth on stamped strokes
    base_amp: float = 0.25  # mm std of the low-frequency base surface
    base_cell_px: int = 48
    noise_sigma: float = 0.1  # mm std of per-pixel depth noise
    smooth_sigma_px: float = 0.6
    edge_taper_mm: float = 0.0
    background_mm: float = 5.0
    depth_scale: float = 0.01

    def __post_init__(self):
        if self.size_px < 16 or self.pitch <= 0:
            raise ParamError("sherd raster too small or pitch invalid")
        if self.noise_sigma < 0 or self.base_amp < 0 or self.smooth_sigma_px < 0:
            raise ParamError("noise, base amplitude and smoothing must be >= 0")


@dataclass(frozen=True)
class SherdTruth:
    """Which design a sherd came from and where it sat on it.

    ``transform`` maps sherd-local mm coordinates to design coordinates
    (u' = R u + t).
    """

    label: str
    transform: RigidTransform


@dataclass(frozen=True)
class Sherd:
    depth: DepthImage
    gt_mask: np.ndarray
    gt_skeleton: SkeletonSet
    truth: SherdTruth


def _base_surface(rng: np.random.Generator, size: int, cell: int, amp: float) -> np.ndarray:
    if amp == 0.0:
        return np.zeros((size, size))
    coarse = rng.standard_normal((size // cell + 3, size // cell + 3))
    zoomed = ndimage.zoom(coarse, cell, order=3)[:size, :size]
    std = zoomed.std()
    if std == 0.0:
        return np.zeros((size, size))
    return amp * (zoomed - zoomed.mean()) / std


def synth_sherd(design: Design, params: SynthParams | None = None) -> Sherd:
    """Render one sherd: a rigid crop of the design stamped into a noisy
    depth surface, with its ground-truth mask, skeleton and placement.

    With zero noise, flat base, no smoothing and no taper the depth equals
    ``background + stamp_depth`` exactly on the ground-truth mask and
    ``background`` elsewhere.
    """
    params = params or SynthParams()
    rng = np.random.default_rng([design.seed & 0x7FFFFFFF, params.seed])
    size = params.size_px
    half_diag = size * params.pitch * math.sqrt(0.5)
    lo, hi = half_diag, design.canvas_mm - half_diag
    if lo >= hi:
        raise ParamError(
            f"a {size}px crop at {params.pitch} mm/px does not fit a "
            f"{design.canvas_mm} mm design"
        )
    centre_design = rng.uniform(lo, hi, size=2)
    theta = rng.uniform(0.0, 2.0 * math.pi)

    # sherd pixel centres in design coordinates
    local_centre = np.array([(size - 1) / 2.0, (size - 1) / 2.0]) * params.pitch
    cols, rows = np.meshgrid(np.arange(size), np.arange(size))
    local = np.column_stack([cols.ravel(), rows.ravel()]).astype(np.float64) * params.pitch
    c, s = math.cos(theta), math.sin(theta)
    rot_centre = np.array([local_centre[0] * c - local_centre[1] * s,
                           local_centre[0] * s + local_centre[1] * c])
    t = centre_design - rot_centre
    transform = RigidTransform(rotation=theta, dx=float(t[0]), dy=float(t[1]))
    pos = transform.apply(local)

    samples = []
    stroke_of = []
    for i, (pts, _) in enumerate(design.strokes):
        samples.append(pts)
        stroke_of.append(np.full(len(pts), i))
    samples = np.concatenate(samples, axis=0)
    stroke_of = np.concatenate(stroke_of)
    widths = np.array([w for _, w in design.strokes])
    dist, nearest = cKDTree(samples).query(pos, k=1)
    half_w = widths[stroke_of[nearest]] / 2.0

    gt_mask = (dist <= half_w).reshape(size, size)
    if params.edge_taper_mm > 0:
        profile = np.clip((half_w - dist) / params.edge_taper_mm, 0.0, 1.0)
    else:
        profile = (dist <= half_w).astype(np.float64)
    stamp = params.stamp_depth * profile.reshape(size, size)

    depth = params.background_mm + _base_surface(
        rng, size, params.base_cell_px, params.base_amp
    ) + stamp
    if params.smooth_sigma_px > 0:
        k = 2 * int(math.ceil(3.0 * params.smooth_sigma_px)) + 1
        depth = imagecore.gaussian_blur(depth, params.smooth_sigma_px, k)
    if params.noise_sigma > 0:
        depth = depth + rng.normal(0.0, params.noise_sigma, size=(size, size))

    # keep depths exactly representable at the file quantisation
    depth = np.rint(depth / params.depth_scale) * params.depth_scale
    depth = np.clip(depth, 0.0, 65535 * params.depth_scale)

    gt_skeleton = SkeletonSet.from_mask(imagecore.thin(gt_mask))
    return Sherd(
        depth=DepthImage(depth, pitch=params.pitch, depth_scale=params.depth_scale),
        gt_mask=gt_mask,
        gt_skeleton=gt_skeleton,
        truth=SherdTruth(label=design.label, transform=transform),
    )
