"""Skeleton extraction from heat maps and patch-based false-positive pruning.

The heat map is binarised and thinned into an ordered set of skeleton
pixels.  Each candidate pixel is then re-scored from the 45x45 depth
window around it and kept only when the score clears 0.5 (inclusive).
Two window scorers share that interface: a depth-contrast statistic that
needs no trained weights, and a loaded patch classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import imagecore, inference
from .errors import EmptySkeletonError, ParamError
from .imagecore import DepthImage
from .inference import Network

PATCH_SIZE = 45
KEEP_THRESHOLD = 0.5  # inclusive: a window scoring exactly 0.5 is kept

PatchScorer = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class SkeletonSet:
    """Ordered skeleton pixels as (x, y) coordinates in a fixed frame."""

    points: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.int64)).reshape(-1, 2)
        h, w = self.shape
        if pts.size:
            if pts[:, 0].min() < 0 or pts[:, 0].max() >= w or pts[:, 1].min() < 0 or pts[:, 1].max() >= h:
                raise ParamError("skeleton points out of frame bounds")
            if len(np.unique(pts[:, 1].astype(np.int64) * w + pts[:, 0], axis=0)) != len(pts):
                raise ParamError("skeleton points must be unique")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "shape", (int(h), int(w)))

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SkeletonSet":
        """Row-major collection of the true pixels of a mask."""
        m = np.asarray(mask, dtype=bool)
        ys, xs = np.nonzero(m)
        return cls(points=np.column_stack([xs, ys]), shape=m.shape)

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if len(self.points):
            mask[self.points[:, 1], self.points[:, 0]] = True
        return mask


def extract_skeleton(heat: np.ndarray, threshold: float = 0.5) -> SkeletonSet:
    """Binarise the heat map (strictly above threshold) and thin it.

    Strict comparison keeps the no-evidence value 0.5 out of the mask, so
    featureless inputs give an empty skeleton.
    """
    if not (0.0 < threshold < 1.0):
        raise ParamError(f"threshold must be in (0, 1), got {threshold}")
    heat = np.asarray(heat, dtype=np.float64)
    return SkeletonSet.from_mask(imagecore.thin(heat > threshold))


def probability_map(gt_skeleton: SkeletonSet, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Soft skeleton target: 1 / (1 + distance to the nearest skeleton pixel).

    Exactly 1 on skeleton pixels, decaying with Euclidean distance.
    Raises EmptySkeletonError when there are no skeleton pixels; callers
    that want a sentinel can substitute a zero map.
    """
    if len(gt_skeleton) == 0:
        raise EmptySkeletonError("probability map of an empty skeleton")
    if shape is None:
        shape = gt_skeleton.shape
    elif shape != gt_skeleton.shape:
        raise ParamError("requested shape differs from the skeleton frame")
    return 1.0 / (1.0 + imagecore.distance_transform(gt_skeleton.to_mask()))


def _padded_window_view(depth: np.ndarray, half: int) -> np.ndarray:
    padded = np.pad(depth, half, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, (2 * half + 1, 2 * half + 1))


def refine(p_hat: SkeletonSet, depth: DepthImage, patch_scorer: PatchScorer) -> SkeletonSet:
    """Keep the skeleton pixels whose surrounding window scores >= 0.5.

    Windows are PATCH_SIZE x PATCH_SIZE, centred on the pixel, with
    edge-replicated borders; the output preserves the input ordering.
    """
    if depth.data.shape != p_hat.shape:
        raise ParamError("depth and skeleton frames differ")
    if len(p_hat) == 0:
        return p_hat
    half = PATCH_SIZE // 2
    windows = _padded_window_view(depth.data, half)
    kept = [
        (x, y)
        for x, y in p_hat.points
        if patch_scorer(windows[y, x]) >= KEEP_THRESHOLD
    ]
    pts = np.array(kept, dtype=np.int64).reshape(-1, 2)
    return SkeletonSet(points=pts, shape=p_hat.shape)


def _disk_mask(size: int, r_lo: float, r_hi: float) -> np.ndarray:
    half = size // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    r = np.sqrt(xx * xx + yy * yy)
    return (r >= r_lo) & (r <= r_hi)

_CENTRE = np.zeros((PATCH_SIZE, PATCH_SIZE), dtype=bool)
_CENTRE[PATCH_SIZE // 2 - 2 : PATCH_SIZE // 2 + 3, PATCH_SIZE // 2 - 2 : PATCH_SIZE // 2 + 3] = True
_ANNULUS = _disk_mask(PATCH_SIZE, 15.0, 22.0)


def contrast_patch_score(window: np.ndarray, beta: float = 3.0) -> float:
    """Depth-contrast window score in [0, 1].

    z-score of (central 5x5 mean - radius 15..22 annulus mean) against the
    window deviation, squashed by a sigmoid with gain ``beta``.  Flat
    windows score exactly 0.5.  Stamped curves are locally deeper, so a
    centre standing above its surround indicates a true skeleton pixel.
    """
    win = np.asarray(window, dtype=np.float64)
    if win.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ParamError(f"window must be {PATCH_SIZE}x{PATCH_SIZE}, got {win.shape}")
    z = (win[_CENTRE].mean() - win[_ANNULUS].mean()) / (win.std() + 1e-6)
    return float(inference.sigmoid(np.array(beta * z)))


def convnet_patch_score(window: np.ndarray, net: Network) -> float:
    """Channel 0 of a patch classifier run on the raw depth window."""
    win = np.asarray(window, dtype=np.float64)
    if win.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ParamError(f"window must be {PATCH_SIZE}x{PATCH_SIZE}, got {win.shape}")
    outputs = dict(inference.forward(net, win[None]))
    return float(outputs["out"].reshape(-1)[0])
