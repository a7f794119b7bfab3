"""Annotation data model, the corpus document format, and corpus utilities.

Corpus documents are JSON; see ``docs/formats.md`` for the field layout.
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

import jsonschema
import numpy as np

from .geometry import BoundingBox, BoxError

logger = logging.getLogger(__name__)

CORPUS_FORMAT = "aerial-sgg-corpus"
CORPUS_VERSION = 1


class CorpusError(ValueError):
    """Raised for structural or semantic problems in a corpus document."""


@dataclass(frozen=True)
class Vocabulary:
    objects: tuple[str, ...]
    predicates: tuple[str, ...]
    attributes: tuple[str, ...]

    def __post_init__(self):
        for name, entries in (("objects", self.objects), ("predicates", self.predicates), ("attributes", self.attributes)):
            if any(not e for e in entries):
                raise CorpusError(f"empty entry in {name} vocabulary")
            if len(set(entries)) != len(entries):
                raise CorpusError(f"duplicate entry in {name} vocabulary")

    def to_dict(self) -> dict:
        return {"objects": list(self.objects), "predicates": list(self.predicates), "attributes": list(self.attributes)}


@dataclass(frozen=True)
class ObjectInstance:
    """One annotated object. ``attributes`` holds sorted attribute indices.

    ``class_scores`` optionally carries an externally predicted class
    distribution (used by the SGCls protocol).
    """

    id: int
    category: int
    box: BoundingBox
    attributes: tuple[int, ...] = ()
    class_scores: Optional[tuple[float, ...]] = None

    def attribute_vector(self, size: int) -> np.ndarray:
        vec = np.zeros(size)
        vec[list(self.attributes)] = 1.0
        return vec


@dataclass(frozen=True)
class RelationshipTriple:
    subject_id: int
    object_id: int
    predicate: int


@dataclass(frozen=True)
class SceneAnnotation:
    image_id: str
    width: float
    height: float
    objects: tuple[ObjectInstance, ...]
    triples: tuple[RelationshipTriple, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {o.id: i for i, o in enumerate(self.objects)})

    def index_of(self, object_id: int) -> int:
        return self._index[object_id]

    def triple_indices(self) -> list[tuple[int, int, int]]:
        """Triples as (subject_index, object_index, predicate) positions."""
        return [(self._index[t.subject_id], self._index[t.object_id], t.predicate) for t in self.triples]


@dataclass(frozen=True)
class Corpus:
    vocab: Vocabulary
    scenes: tuple[SceneAnnotation, ...]

    def __len__(self):
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __getitem__(self, i):
        return self.scenes[i]

    def subset(self, scenes: Iterable[SceneAnnotation]) -> "Corpus":
        return Corpus(self.vocab, tuple(scenes))


_BOX = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_INDEX_LIST = {"type": "array", "items": {"type": "integer"}}

CORPUS_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "vocabulary", "scenes"],
    "properties": {
        "format": {"const": CORPUS_FORMAT},
        "version": {"const": CORPUS_VERSION},
        "vocabulary": {
            "type": "object",
            "required": ["objects", "predicates", "attributes"],
            "properties": {
                k: {"type": "array", "items": {"type": "string"}} for k in ("objects", "predicates", "attributes")
            },
        },
        "scenes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "width", "height", "objects", "relationships"],
                "properties": {
                    "image_id": {"type": "string"},
                    "width": {"type": "number", "exclusiveMinimum": 0},
                    "height": {"type": "number", "exclusiveMinimum": 0},
                    "objects": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "category", "box"],
                            "properties": {
                                "id": {"type": "integer"},
                                "category": {"type": "integer"},
                                "box": _BOX,
                                "attributes": _INDEX_LIST,
                                "class_scores": {"type": "array", "items": {"type": "number"}},
                            },
                            "additionalProperties": False,
                        },
                    },
                    "relationships": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["subject", "object", "predicate"],
                            "properties": {
                                "subject": {"type": "integer"},
                                "object": {"type": "integer"},
                                "predicate": {"type": "integer"},
                            },
                            "additionalProperties": False,
                        },
                    },
                },
                "additionalProperties": False,
            },
        },
        "meta": {"type": "object"},
    },
    "additionalProperties": False,
}


def _load_json(source: Union[str, bytes, IO]) -> object:
    text = source if isinstance(source, (str, bytes)) else source.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _check_structure(doc: object, schema: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        path = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise CorpusError(f"structural error at {path}: {error.message}")


def _build_scene(raw: dict, vocab: Vocabulary) -> SceneAnnotation:
    sid = raw["image_id"]
    width, height = float(raw["width"]), float(raw["height"])
    objects = []
    seen = set()
    for o in raw["objects"]:
        oid = o["id"]
        if oid in seen:
            raise CorpusError(f"scene {sid!r}: duplicate object id {oid}")
        seen.add(oid)
        if not 0 <= o["category"] < len(vocab.objects):
            raise CorpusError(f"scene {sid!r}: object {oid} category {o['category']} out of range")
        try:
            box = BoundingBox.from_sequence(o["box"])
        except BoxError as exc:
            raise CorpusError(f"scene {sid!r}: object {oid}: {exc}") from exc
        if box.x_min < 0 or box.y_min < 0 or box.x_max > width or box.y_max > height:
            raise CorpusError(f"scene {sid!r}: object {oid} box {box.as_tuple()} outside image {width}x{height}")
        attrs = o.get("attributes", [])
        if len(set(attrs)) != len(attrs):
            raise CorpusError(f"scene {sid!r}: object {oid} repeats an attribute index")
        if any(not 0 <= a < len(vocab.attributes) for a in attrs):
            raise CorpusError(f"scene {sid!r}: object {oid} attribute index out of range")
        scores = o.get("class_scores")
        if scores is not None:
            if len(scores) != len(vocab.objects):
                raise CorpusError(f"scene {sid!r}: object {oid} class_scores length != object vocabulary size")
            if any(s < 0 for s in scores) or abs(sum(scores) - 1.0) > 1e-6:
                raise CorpusError(f"scene {sid!r}: object {oid} class_scores is not a distribution")
            scores = tuple(float(s) for s in scores)
        objects.append(ObjectInstance(oid, o["category"], box, tuple(sorted(attrs)), scores))

    triples = []
    seen_triples = set()
    for r in raw["relationships"]:
        t = RelationshipTriple(r["subject"], r["object"], r["predicate"])
        for ref in (t.subject_id, t.object_id):
            if ref not in seen:
                raise CorpusError(f"scene {sid!r}: relationship references missing object id {ref}")
        if t.subject_id == t.object_id:
            raise CorpusError(f"scene {sid!r}: self-relationship on object {t.subject_id}")
        if not 0 <= t.predicate < len(vocab.predicates):
            raise CorpusError(f"scene {sid!r}: predicate {t.predicate} out of range")
        if t in seen_triples:
            raise CorpusError(f"scene {sid!r}: duplicate triple {t}")
        seen_triples.add(t)
        triples.append(t)
    return SceneAnnotation(sid, width, height, tuple(objects), tuple(triples))


def parse_corpus(source: Union[str, bytes, IO]) -> Corpus:
    """Parse and fully validate a corpus document (text or file object)."""
    doc = _load_json(source)
    _check_structure(doc, CORPUS_SCHEMA)
    try:
        vocab = Vocabulary(*(tuple(doc["vocabulary"][k]) for k in ("objects", "predicates", "attributes")))
    except CorpusError as exc:
        raise CorpusError(f"vocabulary: {exc}") from exc
    scenes = [_build_scene(raw, vocab) for raw in doc["scenes"]]
    ids = Counter(s.image_id for s in scenes)
    dup = [k for k, v in ids.items() if v > 1]
    if dup:
        raise CorpusError(f"duplicate image_id {dup[0]!r}")
    return Corpus(vocab, tuple(scenes))


def load_corpus(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def _scene_to_dict(scene: SceneAnnotation) -> dict:
    objs = []
    for o in scene.objects:
        d = {"id": o.id, "category": o.category, "box": list(o.box.as_tuple()), "attributes": list(o.attributes)}
        if o.class_scores is not None:
            d["class_scores"] = list(o.class_scores)
        objs.append(d)
    return {
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "objects": objs,
        "relationships": [{"subject": t.subject_id, "object": t.object_id, "predicate": t.predicate} for t in scene.triples],
    }


def serialize_corpus(corpus: Corpus, meta: Optional[dict] = None) -> str:
    """Canonical serialization: fixed key order, floats in repr precision."""
    doc = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "vocabulary": corpus.vocab.to_dict()}
    if meta is not None:
        doc["meta"] = meta
    doc["scenes"] = [_scene_to_dict(s) for s in corpus.scenes]
    return json.dumps(doc, indent=1) + "\n"


def check_connectivity(scene: SceneAnnotation) -> list[int]:
    """Ids of objects that take part in no relationship triple."""
    linked = set()
    for t in scene.triples:
        linked.add(t.subject_id)
        linked.add(t.object_id)
    return [o.id for o in scene.objects if o.id not in linked]


def duplicate_groundings(scene: SceneAnnotation) -> list[tuple[int, int]]:
    """Pairs of object ids with the same category and identical box."""
    seen: dict = {}
    dups = []
    for o in scene.objects:
        key = (o.category, o.box)
        if key in seen:
            dups.append((seen[key], o.id))
        else:
            seen[key] = o.id
    return dups


@dataclass
class CorpusStats:
    num_images: int
    objects_per_image: float
    relationships_per_image: float
    attributes_per_image: float
    object_histogram: dict
    predicate_histogram: dict
    attribute_histogram: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    vocab = corpus.vocab
    n = len(corpus.scenes)
    obj_h = Counter({name: 0 for name in vocab.objects})
    pred_h = Counter({name: 0 for name in vocab.predicates})
    att_h = Counter({name: 0 for name in vocab.attributes})
    n_obj = n_rel = n_att = 0
    for s in corpus.scenes:
        n_obj += len(s.objects)
        n_rel += len(s.triples)
        for o in s.objects:
            obj_h[vocab.objects[o.category]] += 1
            n_att += len(o.attributes)
            for a in o.attributes:
                att_h[vocab.attributes[a]] += 1
        for t in s.triples:
            pred_h[vocab.predicates[t.predicate]] += 1

    def mean(x):
        return x / n if n else 0.0

    return CorpusStats(n, mean(n_obj), mean(n_rel), mean(n_att), dict(obj_h), dict(pred_h), dict(att_h))


def split_corpus(corpus: Corpus, train_fraction: float, seed: Union[int, np.random.Generator]) -> tuple[Corpus, Corpus]:
    """Deterministic scene-level split; original scene order kept within each half."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(corpus.scenes)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx = set(perm[:n_train].tolist())
    train = [s for i, s in enumerate(corpus.scenes) if i in train_idx]
    test = [s for i, s in enumerate(corpus.scenes) if i not in train_idx]
    return corpus.subset(train), corpus.subset(test)


# --- externally supplied detections (SGDet input) ---------------------------

DETECTIONS_FORMAT = "aerial-sgg-detections"

DETECTIONS_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "images"],
    "properties": {
        "format": {"const": DETECTIONS_FORMAT},
        "version": {"const": 1},
        "images": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["box", "class_scores"],
                    "properties": {
                        "box": _BOX,
                        "class_scores": {"type": "array", "items": {"type": "number"}},
                        "attributes": _INDEX_LIST,
                    },
                    "additionalProperties": False,
                },
            },
        },
    },
}


def parse_detections(source, vocab: Vocabulary, corpus: Corpus) -> dict[str, SceneAnnotation]:
    """Turn a detections document into detector-fed scenes keyed by image id.

    Each detection becomes an object labelled with the arg-max class and
    carrying its class distribution; detected scenes have no triples.
    """
    doc = _load_json(source)
    _check_structure(doc, DETECTIONS_SCHEMA)
    sizes = {s.image_id: (s.width, s.height) for s in corpus.scenes}
    out = {}
    for image_id, dets in sorted(doc["images"].items()):
        if image_id not in sizes:
            raise CorpusError(f"detections reference unknown image {image_id!r}")
        width, height = sizes[image_id]
        raw = {
            "image_id": image_id,
            "width": width,
            "height": height,
            "objects": [
                {
                    "id": i,
                    "category": int(np.argmax(d["class_scores"])),
                    "box": d["box"],
                    "attributes": d.get("attributes", []),
                    "class_scores": d["class_scores"],
                }
                for i, d in enumerate(dets)
            ],
            "relationships": [],
        }
        out[image_id] = _build_scene(raw, vocab)
    return out


def validate_corpus(corpus: Corpus) -> dict:
    """Connectivity and duplicate-grounding report (warnings, not errors)."""
    isolated = {}
    duplicates = {}
    for s in corpus.scenes:
        iso = check_connectivity(s)
        if iso:
            isolated[s.image_id] = iso
        dup = duplicate_groundings(s)
        if dup:
            duplicates[s.image_id] = [list(p) for p in dup]
    return {"scenes": len(corpus.scenes), "isolated_objects": isolated, "duplicate_groundings": duplicates}


def objects_of(scene: SceneAnnotation) -> list[tuple[int, BoundingBox]]:
    return [(o.category, o.box) for o in scene.objects]


def vocab_fingerprint(vocab: Vocabulary) -> str:
    return hashlib.sha256(json.dumps(vocab.to_dict(), sort_keys=True).encode()).hexdigest()
