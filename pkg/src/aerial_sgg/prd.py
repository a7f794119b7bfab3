"""Potential relationship detection: ABS filtering and the IOU baseline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import (
    BoundingBox,
    RelativePosition,
    ScaleSearchConfig,
    classify_pair,
    iou,
    max_zoom_in_factor,
    min_zoom_out_factor,
)
from .priors import FactorSummary, PriorDictionary, build_priors, fit_gaussians
from .scenegraph import Corpus
from .validation import check_corpus, check_objects

ObjectList = Sequence[tuple[int, BoundingBox]]


class Provenance(enum.Enum):
    CONTAINMENT = "containment"
    INTERSECTION = "intersection"
    ZOOM_IN = "zoom_in"


class AcceptMode(enum.Enum):
    MAX_BOUND = "max_bound"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class CandidatePair:
    subject_index: int
    object_index: int
    score: float
    provenance: Provenance
    # zoom-in factor for ZOOM_IN pairs; used only as a ranking tie-break
    zoom_factor: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.subject_index == self.object_index:
            raise ValueError("candidate pair needs two distinct objects")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.subject_index, self.object_index)


@dataclass(frozen=True)
class PrdConfig:
    mode: AcceptMode = AcceptMode.MAX_BOUND
    gaussian_k: float = 2.0
    top_k: Optional[int] = None
    # None: reuse the search configs the priors were built with
    zoom_in: Optional[ScaleSearchConfig] = None
    zoom_out: Optional[ScaleSearchConfig] = None

    def __post_init__(self):
        if not self.gaussian_k > 0:
            raise ValueError("gaussian_k must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def _rank_key(c: CandidatePair):
    zoom = c.zoom_factor if c.zoom_factor is not None else 0.0
    return (-c.score, c.provenance is Provenance.ZOOM_IN, zoom, c.subject_index, c.object_index)


def rank_candidates(candidates, top_k: Optional[int] = None) -> list[CandidatePair]:
    """Score descending, zoom-in pairs last by ascending factor, then indices."""
    ranked = sorted(candidates, key=_rank_key)
    return ranked[:top_k] if top_k is not None else ranked


def _accepts(value: float, summary: Optional[FactorSummary], cfg: PrdConfig, upper: bool) -> bool:
    if summary is None:
        return False
    if cfg.mode is AcceptMode.MAX_BOUND:
        return value <= summary.max if upper else value >= summary.min
    half = cfg.gaussian_k * summary.std
    return summary.mean - half <= value <= summary.mean + half


def abs_prd(objects: ObjectList, priors: PriorDictionary, cfg: PrdConfig = PrdConfig()) -> list[CandidatePair]:
    """Filter all ordered object pairs against the prior dictionary.

    ``objects`` is a sequence of ``(category, box)``. A pair is kept when its
    category pair has an entry and its geometry agrees with that entry:
    a containment direction seen before, a zoom-out factor inside the
    observed zoom-out range, or a zoom-in factor inside the zoom-in range.
    """
    check_objects(objects)
    if not priors.fitted:
        raise RuntimeError("prior dictionary is not fitted; call fit_gaussians first")
    zoom_in = cfg.zoom_in or priors.zoom_in
    zoom_out = cfg.zoom_out or priors.zoom_out
    out = []
    n = len(objects)
    for i in range(n):
        cat_a, box_a = objects[i]
        for j in range(n):
            if i == j:
                continue
            cat_b, box_b = objects[j]
            stats = priors.get(cat_a, cat_b)
            if stats is None:
                continue
            position = classify_pair(box_a, box_b)
            if position is RelativePosition.A_CONTAINS_B:
                if stats.contain_count_so > 0:
                    out.append(CandidatePair(i, j, iou(box_a, box_b), Provenance.CONTAINMENT))
            elif position is RelativePosition.B_CONTAINS_A:
                if stats.contain_count_os > 0:
                    out.append(CandidatePair(i, j, iou(box_a, box_b), Provenance.CONTAINMENT))
            elif position is RelativePosition.INTERSECT_NO_CONTAIN:
                down_summary, _ = priors.summaries((cat_a, cat_b))
                if down_summary is None:
                    continue
                p_down = min_zoom_out_factor(box_a, box_b, zoom_out)
                if _accepts(p_down, down_summary, cfg, upper=False):
                    out.append(CandidatePair(i, j, iou(box_a, box_b), Provenance.INTERSECTION))
            else:
                _, up_summary = priors.summaries((cat_a, cat_b))
                if up_summary is None:
                    continue
                p_up = max_zoom_in_factor(box_a, box_b, zoom_in)
                if p_up is not None and _accepts(p_up, up_summary, cfg, upper=True):
                    out.append(CandidatePair(i, j, 0.0, Provenance.ZOOM_IN, p_up))
    return rank_candidates(out, cfg.top_k)


def iou_prd(objects: ObjectList, cfg: PrdConfig = PrdConfig()) -> list[CandidatePair]:
    """Every ordered pair whose boxes overlap, scored by IOU."""
    check_objects(objects)
    out = []
    for i, (_, box_a) in enumerate(objects):
        for j, (_, box_b) in enumerate(objects):
            if i == j:
                continue
            score = iou(box_a, box_b)
            if score > 0.0:
                prov = Provenance.INTERSECTION
                if classify_pair(box_a, box_b) in (RelativePosition.A_CONTAINS_B, RelativePosition.B_CONTAINS_A):
                    prov = Provenance.CONTAINMENT
                out.append(CandidatePair(i, j, score, prov))
    return rank_candidates(out, cfg.top_k)


def prd_recall(candidates: Sequence[CandidatePair], ground_truth) -> float:
    """Share of ground-truth ordered (subject, object) pairs among the candidates.

    ``ground_truth`` holds ``(subject_index, object_index, ...)`` tuples;
    repeated pairs with different predicates count once.
    """
    gt_pairs = {(t[0], t[1]) for t in ground_truth}
    if not gt_pairs:
        return 1.0
    found = {c.pair for c in candidates}
    return len(gt_pairs & found) / len(gt_pairs)


def _objects(scene):
    return [(o.category, o.box) for o in scene.objects]


class AbsPairFilter(BaseEstimator, TransformerMixin):
    """ABS candidate filter as an estimator.

    ``fit`` builds and fits the prior dictionary from an annotated corpus,
    ``transform`` maps scenes to ranked candidate lists.
    """

    def __init__(self, mode="max_bound", gaussian_k=2.0, top_k=None,
                 zoom_in_range=(1.0, 8.0), zoom_out_range=(0.01, 1.0),
                 iter_num=30, iter_threshold=1e-3):
        self.mode = mode
        self.gaussian_k = gaussian_k
        self.top_k = top_k
        self.zoom_in_range = zoom_in_range
        self.zoom_out_range = zoom_out_range
        self.iter_num = iter_num
        self.iter_threshold = iter_threshold

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        if not isinstance(corpus, Corpus):
            raise TypeError("fit needs a Corpus (the category vocabulary keys the priors)")
        zi = ScaleSearchConfig(*self.zoom_in_range, self.iter_num, self.iter_threshold)
        zo = ScaleSearchConfig(*self.zoom_out_range, self.iter_num, self.iter_threshold)
        self.priors_ = fit_gaussians(build_priors(corpus, zi, zo))
        return self

    @classmethod
    def from_priors(cls, priors: PriorDictionary, **params) -> "AbsPairFilter":
        est = cls(**params)
        est.priors_ = priors if priors.fitted else fit_gaussians(priors)
        return est

    def transform(self, X):
        check_is_fitted(self, "priors_")
        cfg = PrdConfig(AcceptMode(self.mode), self.gaussian_k, self.top_k)
        return [abs_prd(_objects(s), self.priors_, cfg) for s in check_corpus(X, allow_empty=True)]


class IouPairFilter(BaseEstimator, TransformerMixin):
    """Overlap-only baseline; ``fit`` is a no-op kept for pipeline symmetry."""

    def __init__(self, top_k=None):
        self.top_k = top_k

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def transform(self, X):
        cfg = PrdConfig(top_k=self.top_k)
        return [iou_prd(_objects(s), cfg) for s in check_corpus(X, allow_empty=True)]
