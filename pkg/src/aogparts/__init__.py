"""Few-shot part localization by growing an And-Or graph over conv features."""

__version__ = "0.1.0"

from .errors import (
    FitError,
    FormatError,
    GenerationError,
    InstanceTooLarge,
    NotFittedError,
    ParseError,
)
from .estimator import AogPartLocalizer
from .evaluation import (
    EvalReport,
    center_prediction,
    evaluate,
    heatmap_export,
    iou,
    normalized_distance,
)
from .features import (
    FeatureVolume,
    LayerGeometry,
    PartAnnotation,
    load_annotations,
    load_volume,
    save_annotations,
    save_volume,
    unit_center,
    validate_volume,
)
from .mining import (
    CandidatePattern,
    MinerConfig,
    enumerate_candidates,
    estimate_nk,
    fit_rank_curve,
    greedy_select,
    grow_aog,
    score_candidate,
    spatial_nms,
)
from .model import (
    Aog,
    AogStats,
    LatentPattern,
    PartTemplate,
    Region,
    ScoreWeights,
    aog_stats,
    build_skeleton,
    deserialize,
    load_aog,
    save_aog,
    serialize,
    validate_aog,
)
from .oracle import brute_force_parse
from .parsing import (
    ParseGraph,
    normalize_responses,
    parse_latent,
    parse_semantic,
    parse_template,
    recompute_part_score,
    s_inf,
    score_terminal,
)
from .synth import PlantedPattern, SignatureEntry, SynthSpec, synth_generate

__all__ = [
    "Aog",
    "AogPartLocalizer",
    "AogStats",
    "CandidatePattern",
    "EvalReport",
    "FeatureVolume",
    "FitError",
    "FormatError",
    "GenerationError",
    "InstanceTooLarge",
    "LatentPattern",
    "LayerGeometry",
    "MinerConfig",
    "NotFittedError",
    "ParseError",
    "ParseGraph",
    "PartAnnotation",
    "PartTemplate",
    "PlantedPattern",
    "Region",
    "ScoreWeights",
    "SignatureEntry",
    "SynthSpec",
    "aog_stats",
    "brute_force_parse",
    "build_skeleton",
    "center_prediction",
    "deserialize",
    "enumerate_candidates",
    "estimate_nk",
    "evaluate",
    "fit_rank_curve",
    "greedy_select",
    "grow_aog",
    "heatmap_export",
    "iou",
    "load_aog",
    "load_annotations",
    "load_volume",
    "normalize_responses",
    "normalized_distance",
    "parse_latent",
    "parse_semantic",
    "parse_template",
    "recompute_part_score",
    "s_inf",
    "save_aog",
    "save_annotations",
    "save_volume",
    "score_candidate",
    "score_terminal",
    "serialize",
    "spatial_nms",
    "synth_generate",
    "unit_center",
    "validate_aog",
    "validate_volume",
]
