"""Recall@K and mean recall@K for PredCls, SGCls and detector-fed SGDet.

Conventions follow the usual scene-graph benchmark code: R@K is the mean of
per-image recalls; mR@K averages, for each predicate, the per-image recall
over images containing it, then averages over predicates. Images without
ground-truth triples are left out and counted.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import BoundingBox, iou
from .prd import CandidatePair, PrdConfig
from .priors import PriorDictionary
from .scenegraph import Corpus, SceneAnnotation

logger = logging.getLogger(__name__)

TASKS = ("PredCls", "SGCls", "SGDet")
RANK_MODES = ("score", "confidence")


class EmptyGroundTruth(ValueError):
    pass


@dataclass(frozen=True)
class PredictedTriple:
    subject_index: int
    object_index: int
    predicate: int
    rank_score: float
    subject_label: Optional[int] = None
    object_label: Optional[int] = None
    subject_box: Optional[BoundingBox] = None
    object_box: Optional[BoundingBox] = None

    def __post_init__(self):
        if not math.isfinite(self.rank_score):
            raise ValueError("rank_score must be finite")
        if self.subject_index < 0 or self.object_index < 0:
            raise ValueError("negative object index")


@dataclass(frozen=True)
class GroundTruthTriple:
    subject_index: int
    object_index: int
    predicate: int
    subject_label: Optional[int] = None
    object_label: Optional[int] = None
    subject_box: Optional[BoundingBox] = None
    object_box: Optional[BoundingBox] = None


def scene_ground_truth(scene: SceneAnnotation) -> list[GroundTruthTriple]:
    out = []
    for s, o, p in scene.triple_indices():
        a, b = scene.objects[s], scene.objects[o]
        out.append(GroundTruthTriple(s, o, p, a.category, b.category, a.box, b.box))
    return out


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple = (50, 150, 250)
    tasks: tuple = ("PredCls",)
    rank_by: str = "score"
    graph_constraint: bool = True
    iou_threshold: float = 0.5
    candidate_source: str = "abs"
    prd: PrdConfig = PrdConfig()

    def __post_init__(self):
        ks = tuple(self.ks)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ValueError("K values must be positive and strictly ascending")
        if any(t not in TASKS for t in self.tasks):
            raise ValueError(f"tasks must come from {TASKS}")
        if self.rank_by not in RANK_MODES:
            raise ValueError(f"rank_by must be one of {RANK_MODES}")
        if self.candidate_source not in ("abs", "iou"):
            raise ValueError("candidate_source must be 'abs' or 'iou'")
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "tasks", tuple(self.tasks))


def triple_matches(pred: PredictedTriple, gt: GroundTruthTriple, task: str = "PredCls", iou_threshold: float = 0.5) -> bool:
    if pred.predicate != gt.predicate:
        return False
    if task == "SGDet":
        return (
            pred.subject_label == gt.subject_label
            and pred.object_label == gt.object_label
            and iou(pred.subject_box, gt.subject_box) >= iou_threshold
            and iou(pred.object_box, gt.object_box) >= iou_threshold
        )
    if (pred.subject_index, pred.object_index) != (gt.subject_index, gt.object_index):
        return False
    if task == "SGCls":
        return pred.subject_label == gt.subject_label and pred.object_label == gt.object_label
    return True


def _hits(predictions, gt, k, task, iou_threshold) -> list[bool]:
    top = predictions[:k]
    return [any(triple_matches(p, g, task, iou_threshold) for p in top) for g in gt]


def recall_at_k(predictions: Sequence[PredictedTriple], gt: Sequence[GroundTruthTriple], k: int,
                task: str = "PredCls", iou_threshold: float = 0.5) -> float:
    """Share of ground-truth triples matched by the first ``k`` predictions.

    ``predictions`` must already be in rank order.
    """
    if not gt:
        raise EmptyGroundTruth("scene has no ground-truth triples")
    hits = _hits(predictions, gt, k, task, iou_threshold)
    return sum(hits) / len(gt)


def per_predicate_recall(predictions, gt, k, task="PredCls", iou_threshold=0.5) -> dict:
    hits = _hits(predictions, gt, k, task, iou_threshold)
    tally: dict = {}
    for g, h in zip(gt, hits):
        got, tot = tally.get(g.predicate, (0, 0))
        tally[g.predicate] = (got + h, tot + 1)
    return {p: got / tot for p, (got, tot) in tally.items()}


def mean_recall_at_k(per_scene_predictions: Sequence, gt_corpus: Sequence, k: int,
                     task: str = "PredCls", iou_threshold: float = 0.5) -> float:
    per_class: dict = {}
    for preds, gt in zip(per_scene_predictions, gt_corpus):
        if not gt:
            continue
        for p, r in per_predicate_recall(preds, gt, k, task, iou_threshold).items():
            per_class.setdefault(p, []).append(r)
    if not per_class:
        return 0.0
    class_means = [math.fsum(v) / len(v) for _, v in sorted(per_class.items())]
    return math.fsum(class_means) / len(class_means)


def corpus_recall_at_k(per_scene_predictions, gt_corpus, k, task="PredCls", iou_threshold=0.5) -> tuple[float, int]:
    """Mean per-scene recall and the number of scenes skipped for empty ground truth."""
    recalls = []
    skipped = 0
    for preds, gt in zip(per_scene_predictions, gt_corpus):
        if not gt:
            skipped += 1
            continue
        recalls.append(recall_at_k(preds, gt, k, task, iou_threshold))
    if not recalls:
        return 0.0, skipped
    return math.fsum(recalls) / len(recalls), skipped


def predicted_triples(candidates: Sequence[CandidatePair], probs: np.ndarray, rank_by: str = "score",
                      graph_constraint: bool = True, labels: Optional[Sequence[int]] = None,
                      boxes: Optional[Sequence[BoundingBox]] = None) -> list[PredictedTriple]:
    """Rank the classifier output of one scene.

    The last column of ``probs`` is the background class and is never
    predicted. ``rank_by="score"`` keeps the candidate ranking (pair score
    first); ``"confidence"`` ranks by predicate probability. With the graph
    constraint each pair contributes only its best predicate.
    """
    if rank_by not in RANK_MODES:
        raise ValueError(f"rank_by must be one of {RANK_MODES}")
    if len(candidates) != len(probs):
        raise ValueError("one probability row per candidate expected")
    n_pred = probs.shape[1] - 1 if len(probs) else 0

    def make(c, p, conf):
        s, o = c.pair
        score = c.score if rank_by == "score" else conf
        return PredictedTriple(
            s, o, p, float(score),
            labels[s] if labels is not None else None,
            labels[o] if labels is not None else None,
            boxes[s] if boxes is not None else None,
            boxes[o] if boxes is not None else None,
        )

    entries = []  # (candidate rank, -confidence, predicate, triple)
    for r, (c, row) in enumerate(zip(candidates, probs)):
        fg = row[:n_pred]
        if graph_constraint:
            p = int(np.argmax(fg))
            entries.append((r, -fg[p], p, make(c, p, fg[p])))
        else:
            for p in range(n_pred):
                entries.append((r, -fg[p], p, make(c, p, fg[p])))
    if rank_by == "score":
        entries.sort(key=lambda e: (e[0], e[1], e[2]))
    else:
        entries.sort(key=lambda e: (e[1], e[3].subject_index, e[3].object_index, e[2]))
    return [e[3] for e in entries]


@dataclass
class MetricReport:
    rows: list
    skipped_scenes: dict
    config: dict

    def value(self, task: str, k: int, metric: str) -> float:
        for r in self.rows:
            if r["task"] == task and r["k"] == k:
                return r["R" if metric == "R" else "mR"]
        raise KeyError((task, k))

    def long_rows(self) -> list[tuple]:
        out = []
        for r in self.rows:
            out.append((r["task"], r["k"], f"R@{r['k']}", r["R"]))
            out.append((r["task"], r["k"], f"mR@{r['k']}", r["mR"]))
        return out

    def to_tsv(self) -> str:
        lines = ["task\tk\tmetric\tvalue"] + [f"{t}\t{k}\t{m}\t{v!r}" for t, k, m, v in self.long_rows()]
        return "\n".join(lines) + "\n"

    def to_json(self, run_config: Optional[dict] = None) -> str:
        doc = {
            "format": "aerial-sgg-metrics",
            "version": 1,
            "config": self.config,
            "skipped_scenes": self.skipped_scenes,
            "results": [{"task": t, "k": k, "metric": m, "value": v} for t, k, m, v in self.long_rows()],
        }
        if run_config is not None:
            doc["run_config"] = run_config
        return json.dumps(doc, indent=1) + "\n"


def _relabelled(scene: SceneAnnotation) -> SceneAnnotation:
    """Copy of ``scene`` whose object categories are the arg-max predicted classes."""
    objs = []
    for o in scene.objects:
        if o.class_scores is None:
            raise ValueError(f"SGCls needs class_scores on every object (scene {scene.image_id!r}, object {o.id})")
        objs.append(replace(o, category=int(np.argmax(o.class_scores))))
    return replace(scene, objects=tuple(objs))


def _scene_predictions(scene, corpus, model, priors, cfg: EvalConfig, mode, labels=None, boxes=None):
    from .lpg import scene_candidates, scene_probabilities

    cands = scene_candidates(scene, cfg.candidate_source, priors, cfg.prd)
    probs = scene_probabilities(scene, corpus.vocab, model, cands, mode)
    return predicted_triples(cands, probs, cfg.rank_by, cfg.graph_constraint, labels, boxes)


def evaluate(model, corpus: Corpus, priors: Optional[PriorDictionary], cfg: EvalConfig = EvalConfig(),
             detections: Optional[Mapping[str, SceneAnnotation]] = None) -> MetricReport:
    """R@K and mR@K for every configured task and K.

    SGDet runs on ``detections`` (image id -> detector-fed scene, see
    :func:`aerial_sgg.scenegraph.parse_detections`); images without
    detections yield no predictions.
    """
    rows = []
    skipped = {}
    gts = [scene_ground_truth(s) for s in corpus.scenes]
    for task in cfg.tasks:
        preds = []
        for scene in corpus.scenes:
            if task == "PredCls":
                preds.append(_scene_predictions(scene, corpus, model, priors, cfg, "ground_truth"))
            elif task == "SGCls":
                rel = _relabelled(scene)
                labels = [o.category for o in rel.objects]
                preds.append(_scene_predictions(rel, corpus, model, priors, cfg, "predicted", labels))
            else:
                if detections is None:
                    raise ValueError("SGDet evaluation needs externally supplied detections")
                det = detections.get(scene.image_id)
                if det is None or not det.objects:
                    preds.append([])
                    continue
                labels = [o.category for o in det.objects]
                boxes = [o.box for o in det.objects]
                preds.append(_scene_predictions(det, corpus, model, priors, cfg, "predicted", labels, boxes))
        for k in cfg.ks:
            r, n_skip = corpus_recall_at_k(preds, gts, k, task, cfg.iou_threshold)
            mr = mean_recall_at_k(preds, gts, k, task, cfg.iou_threshold)
            rows.append({"task": task, "k": k, "R": r, "mR": mr})
        skipped[task] = n_skip if cfg.ks else 0
        if skipped[task]:
            logger.info("%s: %d scene(s) without ground truth left out of the averages", task, skipped[task])
    config = {
        "ks": list(cfg.ks),
        "tasks": list(cfg.tasks),
        "rank_by": cfg.rank_by,
        "graph_constraint": cfg.graph_constraint,
        "iou_threshold": cfg.iou_threshold,
        "candidate_source": cfg.candidate_source,
    }
    return MetricReport(rows, skipped, config)
