"""Synthetic aerial-scene corpora with planted relationship rules.

Every relationship comes from a template that fixes the category pair, the
relative position of the two boxes, and a rule mapping the subject's state
attribute to the predicate. Scenes are laid out on a grid of cells, one
template instance per cell, so templates do not interfere geometrically.
Optional distractor cells hold overlapping tree/car pairs that carry no
relationship (their category pair never occurs in a template).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import BoundingBox, RelativePosition, classify_pair, critical_scale
from .scenegraph import Corpus, ObjectInstance, RelationshipTriple, SceneAnnotation, Vocabulary

OBJECTS = ("person", "car", "road", "grass", "tree", "building", "bench", "dog")
ATTRIBUTES = ("standing", "walking", "running", "sitting", "parked", "moving", "lush", "withered", "white", "red")
PREDICATES = ("stand on", "walk on", "park on", "drive on", "talk to", "play with",
              "cover", "next to", "sit on", "lean on", "chase", "watch")

VOCAB = Vocabulary(OBJECTS, PREDICATES, ATTRIBUTES)

# name -> (subject, object, position, {subject state: predicate}, both_directions)
TEMPLATES = {
    "person_on_grass": ("person", "grass", "b_contains_a", {"standing": "stand on", "walking": "walk on"}, False),
    "car_on_road": ("car", "road", "b_contains_a", {"parked": "park on", "moving": "drive on"}, False),
    "tree_by_building": ("tree", "building", "intersect", {"lush": "cover", "withered": "next to"}, False),
    "person_at_bench": ("person", "bench", "intersect", {"sitting": "sit on", "standing": "lean on"}, False),
    "person_with_person": ("person", "person", "disjoint", {"running": "play with", "standing": "talk to"}, True),
    "dog_near_person": ("dog", "person", "disjoint", {"running": "chase", "sitting": "watch"}, False),
}
CONTACT_WEIGHTS = {"person_on_grass": 0.3, "car_on_road": 0.3, "tree_by_building": 0.25, "person_at_bench": 0.15}
DISJOINT_WEIGHTS = {"person_with_person": 0.6, "dog_near_person": 0.4}

SIZES = {
    "person": ((6, 12), (10, 18)),
    "car": ((14, 22), (8, 12)),
    "road": ((100, 140), (22, 30)),
    "grass": ((60, 110), (50, 90)),
    "tree": ((20, 34), (20, 34)),
    "building": ((40, 70), (40, 70)),
    "bench": ((16, 24), (6, 10)),
    "dog": ((6, 10), (5, 8)),
}
DECORATIVE = {"person": ("white", "red"), "car": ("white", "red"), "grass": ("lush", "withered")}


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 200
    seed: int = 0
    width: float = 600.0
    height: float = 400.0
    grid: tuple = (4, 3)
    min_groups: int = 4
    max_groups: int = 7
    disjoint_fraction: float = 0.3
    distractor_rate: float = 0.5
    zoom_range: tuple = (1.3, 3.0)

    def __post_init__(self):
        cells = self.grid[0] * self.grid[1]
        if not 1 <= self.min_groups <= self.max_groups < cells:
            raise ValueError("need 1 <= min_groups <= max_groups < number of grid cells")
        if not 0 <= self.disjoint_fraction <= 1:
            raise ValueError("disjoint_fraction must lie in [0, 1]")


def _size(rng, cat):
    (w0, w1), (h0, h1) = SIZES[cat]
    return rng.uniform(w0, w1), rng.uniform(h0, h1)


def _box(cx, cy, w, h):
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _inside(box, cell):
    return box.x_min >= cell.x_min and box.y_min >= cell.y_min and box.x_max <= cell.x_max and box.y_max <= cell.y_max


def _place(rng, cell, w, h, margin=2.0):
    cx = rng.uniform(cell.x_min + w / 2 + margin, cell.x_max - w / 2 - margin)
    cy = rng.uniform(cell.y_min + h / 2 + margin, cell.y_max - h / 2 - margin)
    return _box(cx, cy, w, h)


def _geometry(rng, template, cell, zoom_range):
    """Boxes for (subject, object) in ``cell`` realizing the template's position."""
    subj, obj, position, _, _ = TEMPLATES[template]
    for _ in range(200):
        sw, sh = _size(rng, subj)
        ow, oh = _size(rng, obj)
        if position == "b_contains_a":
            ob = _place(rng, cell, ow, oh)
            sb = _place(rng, ob, sw, sh, margin=0.5)
        elif position == "intersect":
            ob = _place(rng, cell, ow, oh, margin=0.8 * max(sw, sh))
            # subject center sits on a random edge of the object box
            side = rng.integers(4)
            t = rng.uniform(0.2, 0.8)
            if side == 0:
                cx, cy = ob.x_min + t * ow, ob.y_min + rng.uniform(-0.3, 0.3) * sh
            elif side == 1:
                cx, cy = ob.x_min + t * ow, ob.y_max + rng.uniform(-0.3, 0.3) * sh
            elif side == 2:
                cx, cy = ob.x_min + rng.uniform(-0.3, 0.3) * sw, ob.y_min + t * oh
            else:
                cx, cy = ob.x_max + rng.uniform(-0.3, 0.3) * sw, ob.y_min + t * oh
            sb = _box(cx, cy, sw, sh)
        else:
            factor = rng.uniform(*zoom_range)
            ob = _place(rng, cell, ow, oh)
            horizontal = rng.random() < 0.5
            sign = 1 if rng.random() < 0.5 else -1
            ox, oy = ob.center
            if horizontal:
                dx = sign * factor * (sw + ow) / 2
                dy = rng.uniform(-0.5, 0.5) * (sh + oh) / 2
            else:
                dx = rng.uniform(-0.5, 0.5) * (sw + ow) / 2
                dy = sign * factor * (sh + oh) / 2
            sb = _box(ox + dx, oy + dy, sw, sh)
        if not (_inside(sb, cell) and _inside(ob, cell)):
            continue
        got = classify_pair(sb, ob)
        want = {
            "b_contains_a": RelativePosition.B_CONTAINS_A,
            "intersect": RelativePosition.INTERSECT_NO_CONTAIN,
            "disjoint": RelativePosition.DISJOINT,
        }[position]
        if got is not want:
            continue
        if position == "disjoint" and not zoom_range[0] <= critical_scale(sb, ob) <= zoom_range[1]:
            continue
        return sb, ob
    raise RuntimeError(f"could not place template {template!r} in cell {cell}")


def _attributes(rng, cat, state=None):
    names = [state] if state else []
    for extra in DECORATIVE.get(cat, ()):
        if extra not in names and rng.random() < 0.3:
            names.append(extra)
            break
    return tuple(sorted(ATTRIBUTES.index(a) for a in names))


def _choose_templates(rng, n_groups, disjoint_fraction):
    n_disjoint = math.ceil(disjoint_fraction * n_groups)
    names = []
    for weights, count in ((DISJOINT_WEIGHTS, n_disjoint), (CONTACT_WEIGHTS, n_groups - n_disjoint)):
        keys = sorted(weights)
        p = np.array([weights[k] for k in keys])
        names += [keys[i] for i in rng.choice(len(keys), size=count, p=p / p.sum())]
    return names


def generate_scene(rng: np.random.Generator, image_id: str, cfg: SynthConfig) -> tuple[SceneAnnotation, dict]:
    cols, rows = cfg.grid
    cw, ch = cfg.width / cols, cfg.height / rows
    n_groups = int(rng.integers(cfg.min_groups, cfg.max_groups + 1))
    with_distractor = rng.random() < cfg.distractor_rate
    cells = rng.permutation(cols * rows)[: n_groups + int(with_distractor)]
    templates = _choose_templates(rng, n_groups, cfg.disjoint_fraction)

    objects, triples, groups = [], [], []

    def add(cat, box, attrs):
        objects.append(ObjectInstance(len(objects), OBJECTS.index(cat), box, attrs))
        return len(objects) - 1

    def cell_box(c):
        x0, y0 = (c % cols) * cw, (c // cols) * ch
        return BoundingBox(x0, y0, x0 + cw, y0 + ch)

    for name, c in zip(templates, cells):
        subj, obj, position, rule, both = TEMPLATES[name]
        sb, ob = _geometry(rng, name, cell_box(c), cfg.zoom_range)
        states = sorted(rule)
        s_state = states[rng.integers(len(states))]
        o_state = states[rng.integers(len(states))] if both else None
        s_id = add(subj, sb, _attributes(rng, subj, s_state))
        o_id = add(obj, ob, _attributes(rng, obj, o_state))
        triples.append(RelationshipTriple(s_id, o_id, PREDICATES.index(rule[s_state])))
        if both:
            triples.append(RelationshipTriple(o_id, s_id, PREDICATES.index(rule[o_state])))
        groups.append({"template": name, "position": position, "object_ids": [s_id, o_id]})

    overlaps = 0
    if with_distractor:
        cell = cell_box(cells[-1])
        for _ in range(200):
            tw, th = _size(rng, "tree")
            kw, kh = _size(rng, "car")
            tb = _place(rng, cell, tw, th, margin=kw)
            kb = _box(tb.x_max + rng.uniform(-0.4, 0.3) * kw, tb.center[1] + rng.uniform(-0.3, 0.3) * th, kw, kh)
            if _inside(kb, cell) and classify_pair(tb, kb) is RelativePosition.INTERSECT_NO_CONTAIN:
                t_id = add("tree", tb, _attributes(rng, "tree"))
                k_id = add("car", kb, _attributes(rng, "car"))
                groups.append({"template": "distractor_tree_car", "position": "intersect", "object_ids": [t_id, k_id]})
                overlaps = 1
                break

    scene = SceneAnnotation(image_id, cfg.width, cfg.height, tuple(objects), tuple(triples))
    n_disjoint = sum(
        1 for t in triples if classify_pair(objects[t.subject_id].box, objects[t.object_id].box) is RelativePosition.DISJOINT
    )
    info = {
        "connected": overlaps == 0,
        "groups": groups,
        "disjoint_triples": n_disjoint,
        "planted_overlaps": overlaps,
    }
    return scene, info


def generate_corpus(cfg: SynthConfig = SynthConfig()) -> tuple[Corpus, dict]:
    """A corpus plus a manifest recording the planted structure and histograms."""
    rng = np.random.default_rng(cfg.seed)
    scenes, infos = [], {}
    width = len(str(max(cfg.n_scenes - 1, 0)))
    for i in range(cfg.n_scenes):
        image_id = f"synth_{i:0{width}d}"
        scene, info = generate_scene(rng, image_id, cfg)
        scenes.append(scene)
        infos[image_id] = info
    obj_h = Counter({n: 0 for n in OBJECTS})
    pred_h = Counter({n: 0 for n in PREDICATES})
    att_h = Counter({n: 0 for n in ATTRIBUTES})
    for s in scenes:
        for o in s.objects:
            obj_h[OBJECTS[o.category]] += 1
            for a in o.attributes:
                att_h[ATTRIBUTES[a]] += 1
        for t in s.triples:
            pred_h[PREDICATES[t.predicate]] += 1
    manifest = {
        "generator": "aerial_sgg.synth",
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "rules": {
            name: {"subject": s, "object": o, "position": pos, "predicate_by_subject_state": rule, "both_directions": both}
            for name, (s, o, pos, rule, both) in TEMPLATES.items()
        },
        "histograms": {"objects": dict(obj_h), "predicates": dict(pred_h), "attributes": dict(att_h)},
        "scenes": infos,
    }
    return Corpus(VOCAB, tuple(scenes)), manifest
