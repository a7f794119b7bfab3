"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (or ``python3 tests/test_acceptance.py``).
"""
import time

import numpy as np
import pytest

from helpers import brute_corpus, gradient_check, scan_first_overlap

from aerial_sgg import tensorcore as tc
from aerial_sgg.cli import main as cli_main
from aerial_sgg.geometry import (
    BoundingBox,
    RelativePosition,
    ScaleSearchConfig,
    classify_pair,
    iou,
    max_zoom_in_factor,
    min_zoom_out_factor,
    scale_box,
)
from aerial_sgg.lpg import (
    LpgConfig,
    LpgModel,
    build_adjacency,
    classifier_logits,
    featurize,
    lpg_forward,
    pair_features,
    train,
)
from aerial_sgg.metrics import EvalConfig, GroundTruthTriple, PredictedTriple, corpus_recall_at_k, evaluate, mean_recall_at_k
from aerial_sgg.prd import Provenance, abs_prd, iou_prd
from aerial_sgg.priors import build_priors, fit_gaussians
from aerial_sgg.scenegraph import ObjectInstance, SceneAnnotation, objects_of, split_corpus
from aerial_sgg.synth import VOCAB, SynthConfig, generate_corpus

ZOOM_IN = ScaleSearchConfig(1.0, 8.0)
ZOOM_OUT = ScaleSearchConfig(0.01, 1.0)
EPOCHS = 100


def random_box(rng):
    x, y = rng.uniform(0, 100, 2)
    w, h = rng.uniform(1, 20, 2)
    return BoundingBox(x, y, x + w, y + h)


def random_pairs(rng, position, n):
    out = []
    while len(out) < n:
        a, b = random_box(rng), random_box(rng)
        if classify_pair(a, b) is position:
            out.append((a, b))
    return out


@pytest.fixture(scope="module")
def zoom_results():
    """Bisection and scan results on 1,000 disjoint and 1,000 overlapping pairs."""
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    zin = []
    for a, b in random_pairs(rng, RelativePosition.DISJOINT, 4000):
        got = max_zoom_in_factor(a, b, ZOOM_IN)
        if got is None:
            continue
        want = scan_first_overlap(a, b, ZOOM_IN.scale_min, ZOOM_IN.scale_max)
        if want is not None:
            zin.append((a, b, got, want))
        if len(zin) == 1000:
            break
    zout = []
    for a, b in random_pairs(rng, RelativePosition.INTERSECT_NO_CONTAIN, 4000):
        got = min_zoom_out_factor(a, b, ZOOM_OUT)
        if got == ZOOM_OUT.scale_min:  # overlap persists over the whole range: no bisection ran
            continue
        zout.append((a, b, got, scan_first_overlap(a, b, ZOOM_OUT.scale_min, ZOOM_OUT.scale_max)))
        if len(zout) == 1000:
            break
    return zin, zout, time.perf_counter() - t0


def test_criterion_01_scaling_factor_accuracy(zoom_results, acceptance_report):
    zin, zout, elapsed = zoom_results
    err_in = max(abs(g - w) / w for _, _, g, w in zin)
    err_out = max(abs(g - w) / w for _, _, g, w in zout)
    ok = len(zin) == len(zout) == 1000 and err_in <= 1e-2 and err_out <= 1e-2 and elapsed < 10
    acceptance_report(1, "zoom factors vs linear scan", ok,
                      f"{len(zin)}+{len(zout)} pairs, max rel err in {err_in:.2e} out {err_out:.2e}, {elapsed:.2f} s")


def test_criterion_02_directional_bracketing(zoom_results, acceptance_report):
    zin, zout, _ = zoom_results
    bad = 0
    for a, b, factor, _ in zin + zout:
        if iou(scale_box(a, factor * 0.999), scale_box(b, factor * 0.999)) != 0.0:
            bad += 1
        if iou(scale_box(a, factor * 1.001), scale_box(b, factor * 1.001)) <= 0.0:
            bad += 1
    acceptance_report(2, "bisection brackets the touching scale", bad == 0,
                      f"{len(zin) + len(zout)} results, {bad} bracketing violations")


@pytest.fixture(scope="module")
def corpus200():
    corpus, manifest = generate_corpus(SynthConfig(n_scenes=200, seed=0))
    return corpus, manifest


def pooled_recall(corpus, candidates):
    hit = total = 0
    for scene, cands in zip(corpus.scenes, candidates):
        gt = {(s, o) for s, o, _ in scene.triple_indices()}
        hit += len(gt & {c.pair for c in cands})
        total += len(gt)
    return hit, total


def test_criterion_03_abs_self_consistency(corpus200, acceptance_report):
    corpus, _ = corpus200
    priors = fit_gaussians(build_priors(corpus))
    hit, total = pooled_recall(corpus, [abs_prd(objects_of(s), priors) for s in corpus])
    acceptance_report(3, "priors source corpus recall under max-bound", hit == total,
                      f"recall {hit}/{total} = {hit / total:.4f}")


def test_criterion_04_abs_vs_iou(corpus200, acceptance_report):
    corpus, manifest = corpus200
    priors = fit_gaussians(build_priors(corpus))
    abs_c = [abs_prd(objects_of(s), priors) for s in corpus]
    iou_c = [iou_prd(objects_of(s)) for s in corpus]
    a_hit, total = pooled_recall(corpus, abs_c)
    i_hit, _ = pooled_recall(corpus, iou_c)
    disjoint = sum(i["disjoint_triples"] for i in manifest["scenes"].values()) / sum(len(s.triples) for s in corpus)
    planted = [k for k, s in enumerate(corpus.scenes) if manifest["scenes"][s.image_id]["planted_overlaps"]]
    overlap = (Provenance.CONTAINMENT, Provenance.INTERSECTION)
    n_abs = sum(sum(c.provenance in overlap for c in abs_c[k]) for k in planted)
    n_iou = sum(len(iou_c[k]) for k in planted)
    pruned_everywhere = all(sum(c.provenance in overlap for c in abs_c[k]) < len(iou_c[k]) for k in planted)
    ok = disjoint >= 0.3 and i_hit / total <= 0.70 and a_hit == total and planted and pruned_everywhere
    acceptance_report(4, "ABS vs IOU separation and pruning", ok,
                      f"disjoint share {disjoint:.3f}, IOU recall {i_hit / total:.4f}, ABS recall {a_hit / total:.4f}, "
                      f"overlap candidates on {len(planted)} planted scenes ABS {n_abs} < IOU {n_iou}")


def test_criterion_05_locality_preservation(acceptance_report):
    rng = np.random.default_rng(5)
    checked = failures = 0
    for g in range(100):
        n = int(rng.integers(1, 12))
        f = int(rng.integers(1, 10))
        local = rng.normal(size=(n, f))
        edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < 0.3]
        adj = build_adjacency(n, edges)
        for layers in (1, 2, 3):
            cfg = LpgConfig(n_layers=layers, hidden_dim=int(rng.integers(1, 8)), seed=int(rng.integers(1 << 30)))
            out = lpg_forward(local, adj, LpgModel.initialize(cfg, f, 3)).value
            checked += 1
            failures += not np.array_equal(out[:, :f], local)
    acceptance_report(5, "input columns survive bitwise", failures == 0,
                      f"{checked} graph/depth combinations, {failures} mismatches")


def test_criterion_06_gradient_fidelity(acceptance_report):
    scene = SceneAnnotation("g", 600.0, 400.0, (
        ObjectInstance(0, 0, BoundingBox(100, 100, 110, 115), (0,)),
        ObjectInstance(1, 3, BoundingBox(60, 60, 160, 150), (6,)),
        ObjectInstance(2, 0, BoundingBox(130, 100, 140, 118), (2, 9)),
    ), ())
    rng = np.random.default_rng(6)
    local = featurize(scene, VOCAB)
    pairs = [(0, 1), (2, 1), (0, 2), (2, 0)]
    adj = build_adjacency(3, pairs)
    model = LpgModel.initialize(LpgConfig(n_layers=2, hidden_dim=6, seed=6), local.shape[1], len(VOCAB.predicates) + 1)
    model.bias.value[:] = rng.normal(size=model.bias.shape)
    labels = [0, 12, 4, 12]

    def loss():
        nodes = lpg_forward(local, adj, model)
        return tc.softmax_cross_entropy(classifier_logits(pair_features(nodes, pairs), model), labels)

    err = gradient_check(loss, model.parameters(), h=1e-5)
    n_entries = sum(p.value.size for p in model.parameters())
    acceptance_report(6, "end-to-end gradients vs central differences", err <= 1e-4,
                      f"{n_entries} parameter entries, max rel err {err:.2e}")


def test_criterion_07_metric_oracle(acceptance_report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        scenes = []
        for _ in range(int(rng.integers(1, 5))):
            n_obj = int(rng.integers(2, 5))

            def triple():
                s, o = rng.choice(n_obj, 2, replace=False)
                return (int(s), int(o), int(rng.integers(0, 4)))

            ranked = [triple() for _ in range(int(rng.integers(0, 10)))]
            gt = list(dict.fromkeys(triple() for _ in range(int(rng.integers(0, 6)))))
            scenes.append((ranked, gt))
        k = int(rng.integers(1, 12))
        preds = [[PredictedTriple(s, o, p, float(-i)) for i, (s, o, p) in enumerate(r)] for r, _ in scenes]
        gts = [[GroundTruthTriple(*t) for t in g] for _, g in scenes]
        want_r, want_mr = brute_corpus(scenes, k)
        worst = max(worst, abs(corpus_recall_at_k(preds, gts, k)[0] - float(want_r)),
                    abs(mean_recall_at_k(preds, gts, k) - float(want_mr)))
    acceptance_report(7, "R@K and mR@K vs rational brute force", worst <= 1e-12,
                      f"1000 instances, max abs deviation {worst:.1e}")


@pytest.fixture(scope="module")
def trained_variants(corpus200):
    corpus, _ = corpus200
    train_c, test_c = split_corpus(corpus, 0.8, 0)
    priors = fit_gaussians(build_priors(train_c))
    variants = {
        "l2": LpgConfig(n_layers=2, epochs=EPOCHS),
        "l1": LpgConfig(n_layers=1, epochs=EPOCHS),
        "no_locality": LpgConfig(n_layers=2, epochs=EPOCHS, preserve_locality=False),
        "no_attributes": LpgConfig(n_layers=2, epochs=EPOCHS, use_attributes=False),
    }
    out = {}
    for name, cfg in variants.items():
        t0 = time.perf_counter()
        model, _ = train(train_c, priors, cfg)
        seconds = time.perf_counter() - t0
        report = evaluate(model, test_c, priors, EvalConfig(ks=(50,)))
        out[name] = (report.value("PredCls", 50, "R"), report.value("PredCls", 50, "mR"), seconds)
    return out


def test_criterion_08_learning_sanity(trained_variants, acceptance_report):
    r2, mr2, t2 = trained_variants["l2"]
    r1, _, _ = trained_variants["l1"]
    ok = r2 >= 0.90 and mr2 >= 0.80 and r2 >= r1 and t2 <= 120
    acceptance_report(8, "held-out PredCls with two layers", ok,
                      f"R@50 {r2:.4f}, mR@50 {mr2:.4f}, one layer R@50 {r1:.4f}, trained in {t2:.1f} s")


def test_criterion_09_ablation_direction(trained_variants, acceptance_report):
    full = trained_variants["l2"][0]
    no_loc = trained_variants["no_locality"][0]
    no_att = trained_variants["no_attributes"][0]
    ok = full > no_loc and full > no_att
    acceptance_report(9, "full model beats both ablations", ok,
                      f"R@50 full {full:.4f}, without locality {no_loc:.4f}, without attributes {no_att:.4f}")


def test_criterion_10_reproducibility(tmp_path, acceptance_report):
    def pipeline(d):
        d.mkdir()
        codes = [
            cli_main(["synth", "--scenes", "40", "--seed", "8", "--out", str(d / "corpus.json")]),
            cli_main(["build-priors", str(d / "corpus.json"), "--set", "split.part=train", "--seed", "8",
                      "--out", str(d / "priors.json")]),
            cli_main(["train", str(d / "corpus.json"), "--priors", str(d / "priors.json"), "--set", "split.part=train",
                      "--set", "lpg.epochs=10", "--seed", "8", "--out", str(d / "model.json")]),
            cli_main(["eval", str(d / "corpus.json"), "--model", str(d / "model.json"), "--priors", str(d / "priors.json"),
                      "--set", "split.part=test", "--seed", "8", "--out", str(d / "report.json")]),
        ]
        return codes, {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    codes_a, files_a = pipeline(tmp_path / "run_a")
    codes_b, files_b = pipeline(tmp_path / "run_b")
    same = [n for n in files_a if files_a[n] == files_b.get(n)]
    ok = codes_a == codes_b == [0, 0, 0, 0] and len(same) == len(files_a) == len(files_b) == 7
    acceptance_report(10, "identical seeds and configs give identical artifacts", ok,
                      f"{len(same)}/{len(files_a)} files byte-identical ({', '.join(sorted(files_a))})")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
