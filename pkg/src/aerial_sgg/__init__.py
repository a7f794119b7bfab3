"""Aerial scene-graph generation: box-scaling pair priors, a locality-preserving
graph network and recall metrics, with a reproducible command-line pipeline."""

__version__ = "0.1.0"

from .geometry import BoundingBox, RelativePosition, ScaleSearchConfig, classify_pair, iou
from .geometry import max_zoom_in_factor, min_zoom_out_factor
from .lpg import LpgConfig, LPGRelationClassifier
from .metrics import EvalConfig, evaluate
from .prd import AbsPairFilter, AcceptMode, IouPairFilter, PrdConfig, abs_prd, iou_prd
from .priors import PriorDictionary, build_priors, fit_gaussians
from .scenegraph import Corpus, CorpusError, load_corpus, parse_corpus, serialize_corpus

__all__ = [
    "AbsPairFilter", "AcceptMode", "BoundingBox", "Corpus", "CorpusError", "EvalConfig",
    "IouPairFilter", "LPGRelationClassifier", "LpgConfig", "PrdConfig", "PriorDictionary",
    "RelativePosition", "ScaleSearchConfig", "abs_prd", "build_priors", "classify_pair",
    "evaluate", "fit_gaussians", "iou", "iou_prd", "load_corpus", "max_zoom_in_factor",
    "min_zoom_out_factor", "parse_corpus", "serialize_corpus",
]
