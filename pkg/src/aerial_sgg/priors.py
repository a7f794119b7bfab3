"""The category-pair prior dictionary used by ABS candidate filtering.

Each ordered (subject category, object category) key holds two containment
counts and the raw lists of zoom-out and zoom-in factors observed over
annotated relationships. Summary statistics are always recomputed from the
lists.
"""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .geometry import (
    ZOOM_IN_DEFAULT,
    ZOOM_OUT_DEFAULT,
    BoundingBox,
    RelativePosition,
    ScaleSearchConfig,
    classify_pair,
    max_zoom_in_factor,
    min_zoom_out_factor,
)
from .scenegraph import Corpus, CorpusError, SceneAnnotation

PRIORS_FORMAT = "aerial-sgg-priors"
PRIORS_VERSION = 1


@dataclass(frozen=True)
class FactorSummary:
    count: int
    min: float
    max: float
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return self.variance ** 0.5

    @classmethod
    def of(cls, values) -> Optional["FactorSummary"]:
        if not values:
            return None
        return cls(len(values), min(values), max(values), statistics.fmean(values), statistics.pvariance(values))


@dataclass
class PairStats:
    contain_count_so: int = 0
    contain_count_os: int = 0
    zoom_out_factors: list = field(default_factory=list)
    zoom_in_factors: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.contain_count_so + self.contain_count_os + len(self.zoom_out_factors) + len(self.zoom_in_factors)

    @property
    def zoom_out_summary(self) -> Optional[FactorSummary]:
        return FactorSummary.of(self.zoom_out_factors)

    @property
    def zoom_in_summary(self) -> Optional[FactorSummary]:
        return FactorSummary.of(self.zoom_in_factors)

    def frequencies(self) -> dict:
        """Bucket shares of this entry's observations (read-only view)."""
        n = self.total
        if n == 0:
            return {"contain_so": 0.0, "contain_os": 0.0, "zoom_out": 0.0, "zoom_in": 0.0}
        return {
            "contain_so": self.contain_count_so / n,
            "contain_os": self.contain_count_os / n,
            "zoom_out": len(self.zoom_out_factors) / n,
            "zoom_in": len(self.zoom_in_factors) / n,
        }

    def copy(self) -> "PairStats":
        return PairStats(self.contain_count_so, self.contain_count_os, list(self.zoom_out_factors), list(self.zoom_in_factors))

    def multiset_key(self):
        return (self.contain_count_so, self.contain_count_os, tuple(sorted(self.zoom_out_factors)), tuple(sorted(self.zoom_in_factors)))


@dataclass
class PriorDictionary:
    categories: tuple
    entries: dict = field(default_factory=dict)
    zoom_in: ScaleSearchConfig = ZOOM_IN_DEFAULT
    zoom_out: ScaleSearchConfig = ZOOM_OUT_DEFAULT
    corpus_id: str = ""
    fitted: bool = False
    _summaries: dict = field(default_factory=dict, repr=False, compare=False)

    def get(self, subj_cat: int, obj_cat: int) -> Optional[PairStats]:
        return self.entries.get((subj_cat, obj_cat))

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total(self) -> int:
        return sum(s.total for s in self.entries.values())

    def summaries(self, key) -> tuple[Optional[FactorSummary], Optional[FactorSummary]]:
        """(zoom_out, zoom_in) summaries for a key; requires :func:`fit_gaussians`."""
        if not self.fitted:
            raise RuntimeError("prior dictionary is not fitted; call fit_gaussians first")
        return self._summaries[key]

    def same_observations(self, other: "PriorDictionary") -> bool:
        """Equality up to the order of factor lists."""
        if self.categories != other.categories or set(self.entries) != set(other.entries):
            return False
        return all(self.entries[k].multiset_key() == other.entries[k].multiset_key() for k in self.entries)


def empty_priors(categories, zoom_in=ZOOM_IN_DEFAULT, zoom_out=ZOOM_OUT_DEFAULT, corpus_id="") -> PriorDictionary:
    return PriorDictionary(tuple(categories), {}, zoom_in, zoom_out, corpus_id)


def record_pair(
    priors: PriorDictionary,
    subj_cat: int,
    obj_cat: int,
    subj_box: BoundingBox,
    obj_box: BoundingBox,
) -> PriorDictionary:
    """Add one annotated pair to ``priors`` in place and return it.

    Exactly one bucket changes, except for disjoint pairs that never touch
    within the zoom-in search range; those are dropped.
    """
    key = (subj_cat, obj_cat)
    position = classify_pair(subj_box, obj_box)
    if position is RelativePosition.DISJOINT:
        factor = max_zoom_in_factor(subj_box, obj_box, priors.zoom_in)
        if factor is None:
            return priors
        stats = priors.entries.setdefault(key, PairStats())
        stats.zoom_in_factors.append(factor)
    else:
        stats = priors.entries.setdefault(key, PairStats())
        if position is RelativePosition.A_CONTAINS_B:
            stats.contain_count_so += 1
        elif position is RelativePosition.B_CONTAINS_A:
            stats.contain_count_os += 1
        else:
            stats.zoom_out_factors.append(min_zoom_out_factor(subj_box, obj_box, priors.zoom_out))
    priors.fitted = False
    return priors


def build_priors(
    corpus: Corpus,
    zoom_in: ScaleSearchConfig = ZOOM_IN_DEFAULT,
    zoom_out: ScaleSearchConfig = ZOOM_OUT_DEFAULT,
    corpus_id: str = "",
) -> PriorDictionary:
    """One observation per annotated relationship triple, subject first."""
    priors = empty_priors(corpus.vocab.objects, zoom_in, zoom_out, corpus_id)
    for scene in corpus.scenes:
        _record_scene(priors, scene)
    return priors


def _record_scene(priors: PriorDictionary, scene: SceneAnnotation) -> None:
    by_id = {o.id: o for o in scene.objects}
    for t in scene.triples:
        try:
            s, o = by_id[t.subject_id], by_id[t.object_id]
        except KeyError as exc:
            raise CorpusError(f"scene {scene.image_id!r}: triple references missing object id {exc.args[0]}") from None
        record_pair(priors, s.category, o.category, s.box, o.box)


def merge(a: PriorDictionary, b: PriorDictionary) -> PriorDictionary:
    if a.categories != b.categories:
        raise ValueError("cannot merge prior dictionaries with different category vocabularies")
    if a.zoom_in != b.zoom_in or a.zoom_out != b.zoom_out:
        raise ValueError("cannot merge prior dictionaries built with different scale search configs")
    entries = {k: v.copy() for k, v in a.entries.items()}
    for k, v in b.entries.items():
        if k in entries:
            e = entries[k]
            e.contain_count_so += v.contain_count_so
            e.contain_count_os += v.contain_count_os
            e.zoom_out_factors.extend(v.zoom_out_factors)
            e.zoom_in_factors.extend(v.zoom_in_factors)
        else:
            entries[k] = v.copy()
    corpus_id = "+".join(x for x in (a.corpus_id, b.corpus_id) if x)
    return PriorDictionary(a.categories, entries, a.zoom_in, a.zoom_out, corpus_id)


def fit_gaussians(priors: PriorDictionary) -> PriorDictionary:
    """Return a fitted copy with per-entry summaries (population variance)."""
    fitted = replace(priors, entries={k: v.copy() for k, v in priors.entries.items()}, fitted=True)
    fitted._summaries = {k: (v.zoom_out_summary, v.zoom_in_summary) for k, v in fitted.entries.items()}
    return fitted


def _config_dict(cfg: ScaleSearchConfig) -> dict:
    return {
        "scale_min": cfg.scale_min,
        "scale_max": cfg.scale_max,
        "iter_num": cfg.iter_num,
        "iter_threshold": cfg.iter_threshold,
        "early_stop": cfg.early_stop,
    }


def dumps_priors(priors: PriorDictionary, run_config: Optional[dict] = None) -> str:
    """Serialize to the priors text format (JSON, keys in sorted order)."""
    records = []
    for (s, o) in sorted(priors.entries):
        st = priors.entries[(s, o)]
        records.append(
            {
                "subject": s,
                "object": o,
                "contain_so": st.contain_count_so,
                "contain_os": st.contain_count_os,
                "zoom_out": list(st.zoom_out_factors),
                "zoom_in": list(st.zoom_in_factors),
            }
        )
    doc = {
        "format": PRIORS_FORMAT,
        "version": PRIORS_VERSION,
        "corpus_id": priors.corpus_id,
        "build_config": {"zoom_in": _config_dict(priors.zoom_in), "zoom_out": _config_dict(priors.zoom_out)},
        "fitted": priors.fitted,
        "categories": list(priors.categories),
        "entries": records,
    }
    if run_config is not None:
        doc["run_config"] = run_config
    return json.dumps(doc, indent=1) + "\n"


def loads_priors(text: str) -> PriorDictionary:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed priors file at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if doc.get("format") != PRIORS_FORMAT or doc.get("version") != PRIORS_VERSION:
        raise ValueError("not a version-1 priors document")
    cfg = doc["build_config"]
    priors = empty_priors(doc["categories"], ScaleSearchConfig(**cfg["zoom_in"]), ScaleSearchConfig(**cfg["zoom_out"]), doc["corpus_id"])
    n = len(priors.categories)
    for r in doc["entries"]:
        key = (r["subject"], r["object"])
        if not (0 <= key[0] < n and 0 <= key[1] < n):
            raise ValueError(f"priors entry {key} out of category range")
        if key in priors.entries:
            raise ValueError(f"duplicate priors entry {key}")
        if any(not 0 < f <= 1 for f in r["zoom_out"]) or any(f < 1 for f in r["zoom_in"]):
            raise ValueError(f"priors entry {key} has an out-of-range factor")
        priors.entries[key] = PairStats(r["contain_so"], r["contain_os"], [float(f) for f in r["zoom_out"]], [float(f) for f in r["zoom_in"]])
    return fit_gaussians(priors) if doc.get("fitted") else priors


def save_priors(priors: PriorDictionary, path, run_config: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_priors(priors, run_config))


def load_priors(path) -> PriorDictionary:
    with open(path, encoding="utf-8") as fh:
        return loads_priors(fh.read())


def build_priors_sharded(shards: Iterable[Corpus], **kwargs) -> PriorDictionary:
    """Build one dictionary per shard and fold them with :func:`merge`."""
    result = None
    for shard in shards:
        part = build_priors(shard, **kwargs)
        result = part if result is None else merge(result, part)
    if result is None:
        raise ValueError("no shards given")
    return result
