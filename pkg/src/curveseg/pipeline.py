"""End-to-end segmentation: scoring -> skeleton -> refinement -> width.

This is the glue the CLI and the benchmark both call; every stage result
is kept so intermediate rasters can be written out or inspected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scorer, skeleton, width
from .errors import ConfigError
from .imagecore import DepthImage
from .inference import Network, load_weights
from .skeleton import SkeletonSet


@dataclass(frozen=True)
class PipelineOptions:
    scorer_backend: str = "classical"  # classical | convnet
    scorer_weights: str | None = None
    refiner: str = "classical"  # classical | convnet | none
    refiner_weights: str | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.scorer_backend not in ("classical", "convnet"):
            raise ConfigError(f"unknown scorer backend {self.scorer_backend!r}")
        if self.refiner not in ("classical", "convnet", "none"):
            raise ConfigError(f"unknown refiner {self.refiner!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError("threshold must be in (0, 1)")
        if self.scorer_backend == "convnet" and not self.scorer_weights:
            raise ConfigError("convnet scorer needs a weights file")
        if self.refiner == "convnet" and not self.refiner_weights:
            raise ConfigError("convnet refiner needs a weights file")


@dataclass(frozen=True)
class SegmentationResult:
    heat: np.ndarray
    scale: np.ndarray
    skeleton_raw: SkeletonSet
    skeleton: SkeletonSet
    mask: np.ndarray


def _load_net(path: str | None) -> Network | None:
    return load_weights(path) if path else None


def segment_depth(depth: DepthImage, options: PipelineOptions | None = None) -> SegmentationResult:
    """Run the full three-stage segmentation on one depth image."""
    options = options or PipelineOptions()

    if options.scorer_backend == "classical":
        scores = scorer.classical_scores(depth)
    else:
        scores = scorer.convnet_scores(depth, _load_net(options.scorer_weights))
    heat = scorer.fuse(scores)
    scales = scorer.scale_map(scores)

    raw = skeleton.extract_skeleton(heat, threshold=options.threshold)

    if options.refiner == "none" or len(raw) == 0:
        refined = raw
    elif options.refiner == "classical":
        refined = skeleton.refine(raw, depth, skeleton.contrast_patch_score)
    else:
        net = _load_net(options.refiner_weights)
        refined = skeleton.refine(
            raw, depth, lambda win: skeleton.convnet_patch_score(win, net)
        )

    mask = width.recover_width(depth, refined, scales)
    return SegmentationResult(
        heat=heat, scale=scales, skeleton_raw=raw, skeleton=refined, mask=mask
    )
