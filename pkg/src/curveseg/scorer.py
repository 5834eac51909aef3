"""Multi-scale curve scoring: per-scale score maps, fused heat map, scale map.

Two interchangeable backends produce the same ``ScaleScores`` structure:

* ``classical_scores`` — a difference-of-Gaussians ridge bank at three
  receptive sizes.  Runs with zero trained weights and anchors all tests.
* ``convnet_scores`` — a loaded fully convolutional network whose named
  outputs ``S1``/``S2``/``S3`` provide the per-scale two-channel scores.

Downstream, ``fuse`` accumulates the score pyramid coarse-to-fine with
fixed bilinear upsampling and converts it to a per-pixel curve probability
via a two-channel softmax, and ``scale_map`` picks the per-pixel receptive
scale (1, 2 or 3) with the strongest curve response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imagecore, inference
from .errors import DimError, ParamError, ShapeError
from .imagecore import DepthImage
from .inference import Network

SCALE_SIGMAS = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class ScaleScores:
    """Two-channel score maps at 1/2, 1/4 and 1/8 of the input resolution.

    Channel 0 scores the non-curve class, channel 1 the curve class.
    """

    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    input_shape: tuple[int, int]

    def __post_init__(self):
        maps = []
        prev_h, prev_w = self.input_shape
        for name in ("s1", "s2", "s3"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.ndim != 3 or arr.shape[0] != 2:
                raise ParamError(f"{name} must have shape (2, h, w)")
            if not np.all(np.isfinite(arr)):
                raise ParamError(f"{name} must be finite")
            h, w = arr.shape[1:]
            if not (prev_h // 2 <= h <= -(-prev_h // 2)) or not (prev_w // 2 <= w <= -(-prev_w // 2)):
                raise DimError(
                    f"{name} is {h}x{w}, expected a halving of {prev_h}x{prev_w}"
                )
            prev_h, prev_w = h, w
            maps.append(arr)
        for name, arr in zip(("s1", "s2", "s3"), maps):
            object.__setattr__(self, name, arr)

    @property
    def levels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.s1, self.s2, self.s3)


def _robust_std(values: np.ndarray) -> float:
    """1.4826 * median absolute deviation; a scale estimate that ignores
    the sparse large responses at actual curves."""
    med = np.median(values)
    return 1.4826 * float(np.median(np.abs(values - med)))


def _blur_ksize(sigma: float) -> int:
    return 2 * int(math.ceil(3.0 * sigma)) + 1


def classical_scores(
    depth: DepthImage,
    sigmas: tuple[float, float, float] = SCALE_SIGMAS,
    gain: float | None = None,
) -> ScaleScores:
    """Difference-of-Gaussians ridge scores at three receptive sizes.

    Per scale k, the full-resolution response ``blur(depth, sigma_k) -
    blur(depth, 2*sigma_k)`` is positive where the surface is locally
    deeper (curves), then 2x2-average-downsampled k times so the pyramid
    mirrors the convnet backend.  Channel 1 carries ``gain * response``,
    channel 0 its negation; ``gain`` defaults to 4 / robust std of the
    finest response so the softmax contrast is scale-free.
    """
    data = depth.data
    responses = []
    for sigma in sigmas:
        fine = imagecore.gaussian_blur(data, sigma, _blur_ksize(sigma))
        coarse = imagecore.gaussian_blur(data, 2.0 * sigma, _blur_ksize(2.0 * sigma))
        responses.append(fine - coarse)
    if gain is None:
        gain = 4.0 / max(_robust_std(responses[0]), 1e-9)
    levels = []
    for k, resp in enumerate(responses, start=1):
        down = resp
        for _ in range(k):
            down = imagecore.downsample2_mean(down)
        curve = gain * down
        levels.append(np.stack([-curve, curve]))
    return ScaleScores(*levels, input_shape=data.shape)


def standardize(data: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalisation (identity for flat images)."""
    std = float(data.std())
    if std == 0.0:
        return data - data.mean()
    return (data - data.mean()) / std


def convnet_scores(depth: DepthImage, net: Network) -> ScaleScores:
    """Per-scale scores from a loaded FCN with named outputs S1, S2, S3."""
    x = standardize(depth.data)[None]
    outputs = dict(inference.forward(net, x))
    missing = [name for name in ("S1", "S2", "S3") if name not in outputs]
    if missing:
        raise ShapeError(f"network does not emit {missing}; scoring FCNs must")
    return ScaleScores(
        outputs["S1"], outputs["S2"], outputs["S3"], input_shape=depth.data.shape
    )


def _upsample2_pair(pair: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    up = np.stack([imagecore.bilinear_upsample(ch) for ch in pair])
    return np.stack([imagecore.crop_or_pad(ch, *target) for ch in up])


def fuse(scores: ScaleScores) -> np.ndarray:
    """Accumulate the score pyramid into a curve-probability heat map.

    The coarsest level is upsampled by two and added to the next level,
    repeatedly, then upsampled to the input size; a per-pixel two-channel
    softmax turns the accumulated scores into probabilities and the curve
    channel is returned.  Values are in [0, 1]; equal scores give 0.5.
    """
    s1, s2, s3 = scores.levels
    acc = s2 + _upsample2_pair(s3, s2.shape[1:])
    acc = s1 + _upsample2_pair(acc, s1.shape[1:])
    acc = _upsample2_pair(acc, scores.input_shape)
    return inference.softmax_channel(acc)[1]


def scale_map(scores: ScaleScores) -> np.ndarray:
    """Per-pixel receptive scale in {1, 2, 3}.

    Each level's curve channel is upsampled to the input resolution and the
    scale with the largest raw score wins; ties go to the smallest scale.
    """
    target = scores.input_shape
    stacked = []
    for k, level in enumerate(scores.levels, start=1):
        up = level[1]
        for _ in range(k):
            up = imagecore.bilinear_upsample(up)
        stacked.append(imagecore.crop_or_pad(up, *target))
    return np.argmax(np.stack(stacked), axis=0).astype(np.int64) + 1
