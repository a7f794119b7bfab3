"""Independent oracles shared by the unit tests and the acceptance suite."""
from fractions import Fraction

import numpy as np

from aerial_sgg import tensorcore as tc


def scan_first_overlap(a, b, lo, hi, step=1e-4):
    """Linear scan: first grid scale in [lo, hi] at which the center-scaled boxes overlap."""
    s = np.arange(lo, hi + step, step)
    (ax, ay), (bx, by) = a.center, b.center
    ox = np.abs(ax - bx) < s * (a.width + b.width) / 2
    oy = np.abs(ay - by) < s * (a.height + b.height) / 2
    hit = np.flatnonzero(ox & oy)
    return float(s[hit[0]]) if hit.size else None


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a) + np.abs(b))))


def gradient_check(loss_fn, params, h=1e-5):
    """Worst relative error between tape gradients and central differences."""
    with tc.Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        num = numeric_grad(lambda: loss_fn().value[0, 0], p.value, h)
        worst = max(worst, rel_err(g, num))
    return worst


def brute_recall(ranked, gt, k):
    """Rational recall@k and per-predicate hit tallies by exhaustive comparison.

    ``ranked`` and ``gt`` hold (subject, object, predicate) tuples.
    """
    top = ranked[:k]
    hit = [g for g in gt if g in top]
    per = {}
    for g in gt:
        got, tot = per.get(g[2], (0, 0))
        per[g[2]] = (got + (g in top), tot + 1)
    return Fraction(len(hit), len(gt)), {p: Fraction(a, b) for p, (a, b) in per.items()}


def brute_corpus(scenes, k):
    """(R@k, mR@k) as Fractions over (ranked, gt) scene pairs, skipping empty ground truth."""
    recalls, per_class = [], {}
    for ranked, gt in scenes:
        if not gt:
            continue
        r, per = brute_recall(ranked, gt, k)
        recalls.append(r)
        for p, v in per.items():
            per_class.setdefault(p, []).append(v)
    if not recalls:
        return Fraction(0), Fraction(0)
    means = [sum(v, Fraction(0)) / len(v) for v in per_class.values()]
    return sum(recalls, Fraction(0)) / len(recalls), sum(means, Fraction(0)) / len(means)
