"""Curve-structure segmentation from depth maps and Chamfer design matching."""

from .errors import (
    ConfigError,
    CurvesegError,
    DimError,
    EmptyPatternError,
    EmptySkeletonError,
    FormatError,
    LabelError,
    ParamError,
    ShapeError,
    TruncatedError,
)
from .evalbench import (
    Design,
    DesignParams,
    PrfScore,
    Sherd,
    SynthParams,
    average_prf,
    dilate_ablation,
    dog_baseline,
    pooled_prf,
    prf,
    synth_design,
    synth_sherd,
)
from .imagecore import (
    BinaryMap,
    DepthImage,
    FloatMap,
    bilinear_upsample,
    distance_transform,
    gaussian_blur,
    load_depth_pgm,
    load_mask_pgm,
    save_depth_pgm,
    save_mask_pgm,
    save_overlay_ppm,
    thin,
)
from .inference import Network, forward, load_weights, save_weights
from .matching import (
    DesignIndex,
    MatchResult,
    PointSet,
    RigidTransform,
    SearchParams,
    chamfer_directed,
    cmc_curve,
    match_design,
    rank_designs,
)
from .pipeline import PipelineOptions, SegmentationResult, segment_depth
from .scorer import ScaleScores, classical_scores, convnet_scores, fuse, scale_map
from .skeleton import (
    SkeletonSet,
    contrast_patch_score,
    convnet_patch_score,
    extract_skeleton,
    probability_map,
    refine,
)
from .width import recover_width

__version__ = "0.1.0"
