"""Width recovery: grow the refined skeleton back into a filled curve mask.

For every skeleton pixel, a Euclidean disk of radius ``2**scale`` (scale in
{1, 2, 3}, so radii 2, 4 and 8) is examined.  Pixels of the disk whose
depth is at least halfway between the skeleton pixel's depth and the disk
minimum are marked as curve.  Marks only accumulate (logical OR), so the
result is independent of the order in which skeleton pixels are visited,
and the skeleton pixel itself always qualifies.
"""

from __future__ import annotations

import numpy as np

from .errors import ParamError
from .imagecore import DepthImage
from .skeleton import SkeletonSet


def _disk_offsets(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(span, span)
    keep = dx * dx + dy * dy <= radius * radius
    return np.column_stack([dx[keep], dy[keep]])

_OFFSETS = {s: _disk_offsets(2 ** s) for s in (1, 2, 3)}


def recover_width(depth: DepthImage, p: SkeletonSet, scales: np.ndarray) -> np.ndarray:
    """Binary segmentation from skeleton pixels, scales and local depth.

    ``scales`` is a per-pixel map; only its values at skeleton pixels are
    read.  Disks are clipped at the raster border and the local minimum is
    taken over the clipped disk.  The threshold is relative, so adding a
    constant to the whole depth image does not change the result.
    """
    if depth.data.shape != p.shape:
        raise ParamError("depth and skeleton frames differ")
    scales = np.asarray(scales)
    if scales.shape != p.shape:
        raise ParamError("scale map must match the depth raster")
    h, w = p.shape
    data = depth.data
    out = np.zeros((h, w), dtype=bool)
    for x, y in p.points:
        s = int(scales[y, x])
        if s not in _OFFSETS:
            raise ParamError(f"scale at skeleton pixel ({x}, {y}) is {s}, not in {{1, 2, 3}}")
        offs = _OFFSETS[s]
        xs = offs[:, 0] + x
        ys = offs[:, 1] + y
        inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        xs = xs[inside]
        ys = ys[inside]
        values = data[ys, xs]
        threshold = 0.5 * (data[y, x] + values.min())
        hit = values >= threshold
        out[ys[hit], xs[hit]] = True
    return out
