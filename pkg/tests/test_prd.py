import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aerial_sgg.geometry import BoundingBox, critical_scale
from aerial_sgg.prd import (
    AbsPairFilter,
    AcceptMode,
    CandidatePair,
    IouPairFilter,
    PrdConfig,
    Provenance,
    abs_prd,
    iou_prd,
    prd_recall,
    rank_candidates,
)
from aerial_sgg.priors import build_priors, empty_priors, fit_gaussians, record_pair
from aerial_sgg.scenegraph import objects_of


def oracle_abs(objects, priors, margin=1e-6):
    """Independent reading of the filter: closed-form factors, raw lists as bounds.

    Returns (accepted pairs, ambiguous pairs whose factor sits within ``margin``
    of a bound, where bisection resolution may decide either way).
    """
    keep, unsure = set(), set()
    for i, j in itertools.permutations(range(len(objects)), 2):
        (ca, a), (cb, b) = objects[i], objects[j]
        e = priors.entries.get((ca, cb))
        if e is None:
            continue
        if b.contains(a) and not a.contains(b):
            ok = e.contain_count_os > 0
        elif a.contains(b):
            ok = e.contain_count_so > 0
        else:
            s = critical_scale(a, b)
            if s < 1:  # overlapping
                if not e.zoom_out_factors:
                    continue
                s = max(s, priors.zoom_out.scale_min)
                bound = min(e.zoom_out_factors)
                ok = s >= bound
            else:
                if not e.zoom_in_factors or s >= priors.zoom_in.scale_max:
                    continue
                bound = max(e.zoom_in_factors)
                ok = s <= bound
            if abs(s - bound) < margin:
                unsure.add((i, j))
        if ok:
            keep.add((i, j))
    return keep, unsure


grid = st.integers(0, 40)


@st.composite
def scene_objects(draw, n):
    out = []
    for _ in range(n):
        x, y = draw(grid), draw(grid)
        w, h = draw(st.integers(1, 15)), draw(st.integers(1, 15))
        out.append((draw(st.integers(0, 1)), BoundingBox(x, y, x + w, y + h)))
    return out


@settings(max_examples=150, deadline=None)
@given(scene_objects(6), scene_objects(3))
def test_abs_matches_brute_force_on_three_objects(train_objs, objects):
    priors = empty_priors(("a", "b"))
    for (ca, a), (cb, b) in zip(train_objs[::2], train_objs[1::2]):
        record_pair(priors, ca, cb, a, b)
    priors = fit_gaussians(priors)
    got = {c.pair for c in abs_prd(objects, priors)}
    want, unsure = oracle_abs(objects, priors)
    assert got - unsure == want - unsure


def test_iou_matches_raster_oracle():
    objects = [(0, BoundingBox(0, 0, 4, 4)), (0, BoundingBox(3, 3, 6, 6)), (1, BoundingBox(4, 0, 6, 2)),
               (1, BoundingBox(1, 1, 2, 2))]

    def cells(b):
        return {(x, y) for x in range(int(b.x_min), int(b.x_max)) for y in range(int(b.y_min), int(b.y_max))}

    want = {(i, j) for i, j in itertools.permutations(range(4), 2) if cells(objects[i][1]) & cells(objects[j][1])}
    cands = iou_prd(objects)
    assert {c.pair for c in cands} == want
    assert [c.score for c in cands] == sorted((c.score for c in cands), reverse=True)
    assert {c.provenance for c in cands if c.pair in {(0, 3), (3, 0)}} == {Provenance.CONTAINMENT}


def test_iou_finds_nothing_for_disjoint_objects():
    assert iou_prd([(0, BoundingBox(0, 0, 1, 1)), (0, BoundingBox(5, 5, 6, 6))]) == []


def test_self_consistency_recall(synth_small, synth_priors):
    for scene in synth_small[0]:
        cands = abs_prd(objects_of(scene), synth_priors)
        assert prd_recall(cands, scene.triple_indices()) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_subset_invariance(synth_small, synth_priors, data):
    scene = data.draw(st.sampled_from(synth_small[0].scenes))
    objs = objects_of(scene)
    keep = sorted(data.draw(st.sets(st.integers(0, len(objs) - 1), min_size=2)))
    full = {c.pair for c in abs_prd(objs, synth_priors)}
    sub = {c.pair for c in abs_prd([objs[i] for i in keep], synth_priors)}
    assert {(keep[i], keep[j]) for i, j in sub} == {p for p in full if p[0] in keep and p[1] in keep}


def test_gaussian_mode_narrows_with_k(synth_small, synth_priors):
    objs = objects_of(synth_small[0][0])
    wide = {c.pair for c in abs_prd(objs, synth_priors, PrdConfig(AcceptMode.GAUSSIAN, 100.0))}
    narrow = {c.pair for c in abs_prd(objs, synth_priors, PrdConfig(AcceptMode.GAUSSIAN, 0.01))}
    assert narrow <= wide


def test_ranking_and_top_k():
    cands = [
        CandidatePair(0, 1, 0.0, Provenance.ZOOM_IN, 2.5),
        CandidatePair(1, 0, 0.0, Provenance.ZOOM_IN, 1.5),
        CandidatePair(2, 0, 0.0, Provenance.INTERSECTION),
        CandidatePair(0, 2, 0.4, Provenance.INTERSECTION),
        CandidatePair(2, 1, 0.4, Provenance.CONTAINMENT),
    ]
    ranked = rank_candidates(cands)
    assert [c.pair for c in ranked] == [(0, 2), (2, 1), (2, 0), (1, 0), (0, 1)]
    assert [c.pair for c in rank_candidates(cands, top_k=2)] == [(0, 2), (2, 1)]


def test_unfitted_priors_and_bad_inputs(tiny_corpus):
    with pytest.raises(RuntimeError):
        abs_prd([(0, BoundingBox(0, 0, 1, 1))], build_priors(tiny_corpus))
    with pytest.raises(ValueError):
        iou_prd([])
    with pytest.raises(TypeError):
        iou_prd([(0, (0, 0, 1, 1))])
    with pytest.raises(ValueError):
        CandidatePair(1, 1, 0.0, Provenance.ZOOM_IN)
    with pytest.raises(ValueError):
        PrdConfig(top_k=0)


def test_prd_recall_counts_pairs_once():
    cands = [CandidatePair(0, 1, 0.5, Provenance.INTERSECTION)]
    assert prd_recall(cands, [(0, 1, 0), (0, 1, 2), (1, 2, 0)]) == 0.5
    assert prd_recall([], []) == 1.0


def test_estimators(synth_small):
    corpus = synth_small[0]
    est = AbsPairFilter(top_k=5)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.transform(corpus)
    with pytest.raises(TypeError):
        est.fit(list(corpus))
    out = est.fit(corpus).transform(corpus[:3])
    assert len(out) == 3 and all(len(c) <= 5 for c in out)
    assert AbsPairFilter.from_priors(est.priors_).transform(corpus[0]) == [abs_prd(objects_of(corpus[0]), est.priors_)]
    iou_out = IouPairFilter().fit().transform(corpus)
    assert len(iou_out) == len(corpus)
