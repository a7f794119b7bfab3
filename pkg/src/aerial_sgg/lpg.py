"""Locality-preserving graph convolutional network for predicate classification.

Each layer aggregates neighbour features through a row-normalized adjacency
and a learned projection; the untouched node features are concatenated back
onto the aggregated ones so local context survives any number of layers.
Candidate pairs are classified from the concatenated subject/object rows.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensorcore as tc
from .prd import CandidatePair, PrdConfig, Provenance, abs_prd, iou_prd
from .priors import PriorDictionary, build_priors, fit_gaussians
from .scenegraph import Corpus, SceneAnnotation, Vocabulary, vocab_fingerprint
from .validation import check_corpus

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aerial-sgg-lpg"
CHECKPOINT_VERSION = 1
CANDIDATE_SOURCES = ("abs", "iou", "gt")


@dataclass(frozen=True)
class LpgConfig:
    n_layers: int = 2
    hidden_dim: int = 32
    activation: str = "relu"
    learning_rate: float = 0.01
    epochs: int = 30
    seed: int = 0
    preserve_locality: bool = True
    use_attributes: bool = True
    candidate_source: str = "abs"

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.activation not in tc.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.candidate_source not in CANDIDATE_SOURCES:
            raise ValueError(f"candidate_source must be one of {CANDIDATE_SOURCES}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def feature_dim(vocab: Vocabulary, use_attributes: bool = True) -> int:
    return (len(vocab.attributes) if use_attributes else 0) + 4 + len(vocab.objects)


def featurize(scene: SceneAnnotation, vocab: Vocabulary, mode: str = "ground_truth",
              use_attributes: bool = True) -> np.ndarray:
    """Node feature rows ``[attributes | box | class]``.

    The box block is (x_center, y_center, width, height) divided by the image
    size. ``mode="predicted"`` takes the class block from each object's
    ``class_scores`` instead of a one-hot ground-truth label.
    """
    if mode not in ("ground_truth", "predicted"):
        raise ValueError(f"unknown featurize mode {mode!r}")
    n_att, n_cls = len(vocab.attributes), len(vocab.objects)
    rows = []
    for o in scene.objects:
        if o.category >= n_cls or any(a >= n_att for a in o.attributes):
            raise ValueError(f"object {o.id} of scene {scene.image_id!r} does not fit the vocabulary")
        parts = []
        if use_attributes:
            parts.append(o.attribute_vector(n_att))
        b = o.box
        cx, cy = b.center
        parts.append(np.array([cx / scene.width, cy / scene.height, b.width / scene.width, b.height / scene.height]))
        if mode == "ground_truth":
            cls = np.zeros(n_cls)
            cls[o.category] = 1.0
        else:
            if o.class_scores is None or len(o.class_scores) != n_cls:
                raise ValueError(f"object {o.id} of scene {scene.image_id!r} has no class distribution")
            cls = np.asarray(o.class_scores, dtype=np.float64)
        parts.append(cls)
        rows.append(np.concatenate(parts))
    return np.vstack(rows) if rows else np.zeros((0, feature_dim(vocab, use_attributes)))


def build_adjacency(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Directed edges plus self-loops, row-normalized."""
    a = np.eye(n)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"edge ({i}, {j}) out of range for {n} nodes")
        a[i, j] = 1.0
    return a / a.sum(axis=1, keepdims=True)


@dataclass
class LpgModel:
    config: LpgConfig
    in_dim: int
    n_classes: int
    layers: list = field(default_factory=list)
    classifier: Optional[tc.Tensor] = None
    bias: Optional[tc.Tensor] = None

    @property
    def background(self) -> int:
        return self.n_classes - 1

    @property
    def out_dim(self) -> int:
        h = self.config.hidden_dim
        return self.in_dim + h if self.config.preserve_locality else h

    def parameters(self) -> list:
        return [*self.layers, self.classifier, self.bias]

    @classmethod
    def initialize(cls, config: LpgConfig, in_dim: int, n_classes: int,
                   rng: Optional[np.random.Generator] = None) -> "LpgModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero classifier bias."""
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        h = config.hidden_dim
        model = cls(config, in_dim, n_classes)

        def uniform(rows, cols):
            bound = 1.0 / np.sqrt(rows)
            return tc.Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)

        for t in range(config.n_layers):
            if t == 0:
                fan_in = in_dim
            else:
                fan_in = in_dim + h if config.preserve_locality else h
            model.layers.append(uniform(fan_in, h))
        model.classifier = uniform(2 * model.out_dim, n_classes)
        model.bias = tc.Tensor(np.zeros((1, n_classes)), requires_grad=True)
        return model


def lpg_forward(local, adjacency, model: LpgModel) -> tc.Tensor:
    """Node representations ``[input features | aggregated features]`` after ``n_layers`` layers.

    Without locality preservation this degrades to a plain stacked GCN whose
    output is the last layer's aggregated features only.
    """
    local = tc.as_tensor(local)
    adjacency = tc.as_tensor(adjacency)
    n = local.shape[0]
    if adjacency.shape != (n, n):
        raise ValueError(f"adjacency shape {adjacency.shape} does not match {n} nodes")
    if local.shape[1] != model.in_dim:
        raise ValueError(f"node features have width {local.shape[1]}, model expects {model.in_dim}")
    act = tc.ACTIVATIONS[model.config.activation]
    keep_local = model.config.preserve_locality
    aggregated = None
    for t, w in enumerate(model.layers):
        if t == 0:
            h = local
        else:
            h = tc.concat_cols(local, aggregated) if keep_local else aggregated
        aggregated = act(tc.matmul(tc.matmul(adjacency, h), w))
    return tc.concat_cols(local, aggregated) if keep_local else aggregated


def pair_features(nodes, pairs: Sequence) -> tc.Tensor:
    """Rows ``[nodes[subject] | nodes[object]]`` in pair order.

    ``pairs`` holds CandidatePair objects or (subject, object) tuples.
    """
    idx = [p.pair if isinstance(p, CandidatePair) else tuple(p) for p in pairs]
    subj = [i for i, _ in idx]
    obj = [j for _, j in idx]
    return tc.concat_cols(tc.gather_rows(nodes, subj), tc.gather_rows(nodes, obj))


def classifier_logits(p, model: LpgModel) -> tc.Tensor:
    p = tc.as_tensor(p)
    if p.shape[1] != model.classifier.shape[0]:
        raise ValueError(f"pair features have width {p.shape[1]}, classifier expects {model.classifier.shape[0]}")
    return tc.add_row(tc.matmul(p, model.classifier), model.bias)


def predict(p, model: LpgModel) -> np.ndarray:
    """Per-pair distribution over predicates plus the trailing background class."""
    return tc.row_softmax(classifier_logits(p, model)).value


# --- training ----------------------------------------------------------------


@dataclass
class _Prepared:
    scene: SceneAnnotation
    features: np.ndarray
    adjacency: np.ndarray
    candidates: list
    labels: np.ndarray


def scene_candidates(scene: SceneAnnotation, source: str, priors: Optional[PriorDictionary],
                     prd_config: PrdConfig = PrdConfig()) -> list:
    objects = [(o.category, o.box) for o in scene.objects]
    if not objects:
        return []
    if source == "abs":
        if priors is None:
            raise ValueError("ABS candidates need a prior dictionary")
        return abs_prd(objects, priors, prd_config)
    if source == "iou":
        return iou_prd(objects, prd_config)
    seen = []
    for s, o, _ in scene.triple_indices():
        if (s, o) not in seen:
            seen.append((s, o))
    return [CandidatePair(s, o, 0.0, Provenance.ZOOM_IN) for s, o in seen]


def _prepare(scene, vocab, cfg: LpgConfig, priors, n_predicates: int, prd_config: PrdConfig) -> Optional[_Prepared]:
    candidates = scene_candidates(scene, cfg.candidate_source, priors, prd_config)
    if not candidates:
        return None
    truth = {}
    for s, o, p in scene.triple_indices():
        truth.setdefault((s, o), p)
    labels = np.array([truth.get(c.pair, n_predicates) for c in candidates], dtype=np.intp)
    feats = featurize(scene, vocab, use_attributes=cfg.use_attributes)
    adj = build_adjacency(len(scene.objects), [c.pair for c in candidates])
    return _Prepared(scene, feats, adj, candidates, labels)


def scene_loss(prep: _Prepared, model: LpgModel) -> tc.Tensor:
    nodes = lpg_forward(prep.features, prep.adjacency, model)
    logits = classifier_logits(pair_features(nodes, prep.candidates), model)
    return tc.softmax_cross_entropy(logits, prep.labels)


def train(corpus: Corpus, priors: Optional[PriorDictionary], cfg: LpgConfig = LpgConfig(),
          prd_config: PrdConfig = PrdConfig()) -> tuple[LpgModel, list]:
    """SGD over scenes (one scene per step). Returns the model and per-epoch mean loss."""
    if len(corpus.scenes) == 0:
        raise ValueError("cannot train on an empty corpus")
    vocab = corpus.vocab
    n_pred = len(vocab.predicates)
    prepared = [p for p in (_prepare(s, vocab, cfg, priors, n_pred, prd_config) for s in corpus.scenes) if p is not None]
    if not prepared:
        raise ValueError("no candidate pairs in any training scene")
    init_rng, order_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    model = LpgModel.initialize(cfg, feature_dim(vocab, cfg.use_attributes), n_pred + 1, init_rng)
    params = model.parameters()
    trace = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for k in order_rng.permutation(len(prepared)):
            with tc.Tape() as tape:
                loss = scene_loss(prepared[k], model)
            grads = tape.backward(loss, params)
            tc.sgd_step(params, grads, cfg.learning_rate)
            total += loss.value[0, 0]
        trace.append(float(total / len(prepared)))
        logger.debug("epoch %d mean loss %.6f", epoch + 1, trace[-1])
    return model, trace


def scene_probabilities(scene: SceneAnnotation, vocab: Vocabulary, model: LpgModel,
                        candidates: Sequence[CandidatePair], mode: str = "ground_truth") -> np.ndarray:
    if not candidates:
        return np.zeros((0, model.n_classes))
    feats = featurize(scene, vocab, mode, use_attributes=model.config.use_attributes)
    adj = build_adjacency(len(scene.objects), [c.pair for c in candidates])
    nodes = lpg_forward(feats, adj, model)
    return predict(pair_features(nodes, candidates), model)


# --- checkpoints ---------------------------------------------------------------


def dumps_model(model: LpgModel, vocab: Vocabulary, run_config: Optional[dict] = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "in_dim": model.in_dim,
        "n_classes": model.n_classes,
        "vocab_sha256": vocab_fingerprint(vocab),
        "weights": {
            "layers": [w.value.tolist() for w in model.layers],
            "classifier": model.classifier.value.tolist(),
            "bias": model.bias.value.tolist(),
        },
    }
    if run_config is not None:
        doc["run_config"] = run_config
    return json.dumps(doc, indent=1) + "\n"


def loads_model(text: str, vocab: Optional[Vocabulary] = None) -> LpgModel:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a version-1 LPG checkpoint")
    if vocab is not None and doc["vocab_sha256"] != vocab_fingerprint(vocab):
        raise ValueError("checkpoint was trained against a different vocabulary")
    cfg = LpgConfig(**doc["config"])
    model = LpgModel(cfg, doc["in_dim"], doc["n_classes"])
    model.layers = [tc.Tensor(w, requires_grad=True) for w in doc["weights"]["layers"]]
    model.classifier = tc.Tensor(doc["weights"]["classifier"], requires_grad=True)
    model.bias = tc.Tensor(doc["weights"]["bias"], requires_grad=True)
    if len(model.layers) != cfg.n_layers or model.classifier.shape != (2 * model.out_dim, model.n_classes):
        raise ValueError("checkpoint weights do not match its config")
    return model


def dumps_loss_trace(trace: Sequence[float]) -> str:
    lines = ["epoch,mean_loss"] + [f"{i + 1},{float(v)!r}" for i, v in enumerate(trace)]
    return "\n".join(lines) + "\n"


# --- estimator -------------------------------------------------------------------


class LPGRelationClassifier(BaseEstimator, ClassifierMixin):
    """Predicate classifier over ABS (or IOU / ground-truth) candidate pairs.

    ``fit`` takes an annotated :class:`Corpus` and, for ABS candidates, a
    fitted prior dictionary (built from the same corpus when omitted).
    ``predict_proba`` returns, per scene, the ranked candidates and their
    class distributions; ``predict`` returns ranked predicted triples.
    """

    def __init__(self, n_layers=2, hidden_dim=32, activation="relu", learning_rate=0.01,
                 epochs=30, seed=0, preserve_locality=True, use_attributes=True,
                 candidate_source="abs", rank_by="score", graph_constraint=True):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.preserve_locality = preserve_locality
        self.use_attributes = use_attributes
        self.candidate_source = candidate_source
        self.rank_by = rank_by
        self.graph_constraint = graph_constraint

    def _lpg_config(self) -> LpgConfig:
        return LpgConfig(self.n_layers, self.hidden_dim, self.activation, self.learning_rate,
                         self.epochs, self.seed, self.preserve_locality, self.use_attributes,
                         self.candidate_source)

    def fit(self, X, y=None, priors: Optional[PriorDictionary] = None):
        corpus = check_corpus(X)
        if not isinstance(corpus, Corpus):
            raise TypeError("fit needs a Corpus")
        if priors is None and self.candidate_source == "abs":
            priors = fit_gaussians(build_priors(corpus))
        self.priors_ = priors
        self.vocab_ = corpus.vocab
        self.model_, self.loss_curve_ = train(corpus, priors, self._lpg_config())
        return self

    def _eval_source(self) -> str:
        # ground-truth pairs are a training curriculum only; inference uses ABS
        return "abs" if self.candidate_source == "gt" else self.candidate_source

    def predict_proba(self, X, mode="ground_truth"):
        check_is_fitted(self, "model_")
        out = []
        for scene in check_corpus(X, allow_empty=True):
            cands = scene_candidates(scene, self._eval_source(), self.priors_)
            out.append((cands, scene_probabilities(scene, self.vocab_, self.model_, cands, mode)))
        return out

    def predict(self, X, mode="ground_truth"):
        from .metrics import predicted_triples

        return [predicted_triples(c, p, rank_by=self.rank_by, graph_constraint=self.graph_constraint)
                for c, p in self.predict_proba(X, mode)]

    def score(self, X, y=None, k=50):
        """Mean per-scene PredCls recall@k."""
        from .metrics import EvalConfig, evaluate

        corpus = check_corpus(X)
        if not isinstance(corpus, Corpus):
            corpus = Corpus(self.vocab_, corpus)
        report = evaluate(self.model_, corpus, self.priors_,
                          EvalConfig(ks=(k,), rank_by=self.rank_by, graph_constraint=self.graph_constraint))
        return report.value("PredCls", k, "R")
