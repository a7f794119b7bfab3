"""Command-line pipeline: validate, stats, build-priors, filter, train, eval, synth.

Configuration is layered: built-in defaults, then ``--config`` (JSON or
YAML), then command flags. The fully resolved configuration is echoed into
every artifact so a run can be repeated from the artifact alone.

Exit codes: 0 success, 1 validation or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .geometry import ScaleSearchConfig
from .lpg import LpgConfig, dumps_loss_trace, dumps_model, loads_model, train
from .metrics import EvalConfig, evaluate
from .prd import AcceptMode, PrdConfig, abs_prd, iou_prd, prd_recall
from .priors import build_priors, dumps_priors, fit_gaussians, load_priors, merge
from .scenegraph import (
    Corpus,
    CorpusError,
    corpus_stats,
    load_corpus,
    parse_detections,
    serialize_corpus,
    split_corpus,
    validate_corpus,
)
from .synth import SynthConfig, generate_corpus

logger = logging.getLogger("aerial_sgg")

STREAMS = {"split": 1, "init": 2, "synth": 3}

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "scale_search": {
        "zoom_in": {"scale_min": 1.0, "scale_max": 8.0, "iter_num": 30, "iter_threshold": 1e-3, "early_stop": False},
        "zoom_out": {"scale_min": 0.01, "scale_max": 1.0, "iter_num": 30, "iter_threshold": 1e-3, "early_stop": False},
    },
    "prd": {"mode": "max_bound", "gaussian_k": 2.0, "top_k": None},
    "split": {"part": "all", "train_fraction": 0.8},
    "lpg": {k: v for k, v in asdict(LpgConfig()).items() if k != "seed"},
    "eval": {
        "ks": [50, 150, 250],
        "tasks": ["PredCls"],
        "rank_by": "score",
        "graph_constraint": True,
        "iou_threshold": 0.5,
        "candidate_source": "abs",
    },
    "synth": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(SynthConfig()).items() if k != "seed"},
}


def stream_seed(seed: int, name: str) -> int:
    """Independent integer seed for a named stage."""
    return int(np.random.SeedSequence([STREAMS[name], seed]).generate_state(1)[0])


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in out:
            raise ValueError(f"unknown configuration key {where!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ValueError(f"configuration key {where!r} must be a mapping")
            out[k] = _deep_merge(out[k], v, where + ".")
        else:
            out[k] = v
    return out


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ValueError(f"unknown configuration key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ValueError(f"unknown configuration key {dotted!r}")
    node[keys[-1]] = value


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a mapping")
        cfg = _deep_merge(cfg, loaded)
    for dotted, value in getattr(args, "overrides", []):
        _set_path(cfg, dotted, value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    return cfg


def _scale(cfg: dict, which: str) -> ScaleSearchConfig:
    return ScaleSearchConfig(**cfg["scale_search"][which])


def _prd_config(cfg: dict) -> PrdConfig:
    p = cfg["prd"]
    return PrdConfig(AcceptMode(p["mode"]), p["gaussian_k"], p["top_k"])


def _lpg_config(cfg: dict) -> LpgConfig:
    return LpgConfig(seed=stream_seed(cfg["seed"], "init"), **cfg["lpg"])


def _eval_config(cfg: dict) -> EvalConfig:
    e = cfg["eval"]
    return EvalConfig(tuple(e["ks"]), tuple(e["tasks"]), e["rank_by"], e["graph_constraint"],
                      e["iou_threshold"], e["candidate_source"], _prd_config(cfg))


def _select_part(corpus: Corpus, cfg: dict) -> Corpus:
    part = cfg["split"]["part"]
    if part == "all":
        return corpus
    if part not in ("train", "test"):
        raise ValueError(f"split.part must be all, train or test, got {part!r}")
    train_c, test_c = split_corpus(corpus, cfg["split"]["train_fraction"], stream_seed(cfg["seed"], "split"))
    return train_c if part == "train" else test_c


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _echo(args, cfg: dict) -> dict:
    # worker count never changes results, so it stays out of the echo
    cfg = {k: v for k, v in cfg.items() if k != "workers"}
    # name plus content hash: identical inputs give identical artifacts wherever they live
    inputs = {}
    for k in ("corpus", "priors", "model", "detections"):
        path = getattr(args, k, None)
        if path:
            with open(path, "rb") as fh:
                inputs[k] = {"name": Path(path).name, "sha256": hashlib.sha256(fh.read()).hexdigest()}
    return {"command": args.command, "inputs": inputs, "config": cfg, "version": __version__}


def _sibling(out, suffix: str):
    p = Path(out)
    return p.with_name(p.stem + suffix)


# --- subcommands -------------------------------------------------------------------


def cmd_validate(args, cfg) -> int:
    corpus = load_corpus(args.corpus)
    report = validate_corpus(corpus)
    for image_id, ids in report["isolated_objects"].items():
        logger.warning("scene %s: objects in no relationship: %s", image_id, ids)
    for image_id, pairs in report["duplicate_groundings"].items():
        logger.warning("scene %s: duplicate groundings: %s", image_id, pairs)
    report["valid"] = True
    _write(args.out, json.dumps(report, indent=1) + "\n")
    return 0


def cmd_stats(args, cfg) -> int:
    corpus = _select_part(load_corpus(args.corpus), cfg)
    doc = corpus_stats(corpus).to_dict()
    _write(args.out, json.dumps(doc, indent=1) + "\n")
    return 0


def _build_shard(payload):
    corpus, zi, zo = payload
    return build_priors(corpus, zi, zo)


def cmd_build_priors(args, cfg) -> int:
    corpus = _select_part(load_corpus(args.corpus), cfg)
    zi, zo = _scale(cfg, "zoom_in"), _scale(cfg, "zoom_out")
    workers = max(1, int(cfg["workers"]))
    if workers > 1 and len(corpus) > 1:
        bounds = np.linspace(0, len(corpus), workers + 1).astype(int)
        shards = [corpus.subset(corpus.scenes[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_build_shard, [(s, zi, zo) for s in shards]))
        priors = parts[0]
        for part in parts[1:]:
            priors = merge(priors, part)
    else:
        priors = build_priors(corpus, zi, zo)
    priors.corpus_id = Path(args.corpus).name
    priors = fit_gaussians(priors)
    _write(args.out, dumps_priors(priors, _echo(args, cfg)))
    logger.info("wrote %d prior entries (%d observations)", len(priors), priors.total)
    return 0


def _filter_scene(payload):
    scene, mode, priors, prd_cfg = payload
    objects = [(o.category, o.box) for o in scene.objects]
    if not objects:
        return scene.image_id, [], 1.0
    cands = abs_prd(objects, priors, prd_cfg) if mode == "abs" else iou_prd(objects, prd_cfg)
    return scene.image_id, cands, prd_recall(cands, scene.triple_indices())


def cmd_filter(args, cfg) -> int:
    corpus = _select_part(load_corpus(args.corpus), cfg)
    prd_cfg = _prd_config(cfg)
    priors = None
    if args.mode == "abs":
        if not args.priors:
            raise ValueError("--priors is required in abs mode")
        priors = load_priors(args.priors)
    payloads = [(s, args.mode, priors, prd_cfg) for s in corpus.scenes]
    workers = max(1, int(cfg["workers"]))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_filter_scene, payloads))
    else:
        results = [_filter_scene(p) for p in payloads]
    scenes = []
    recalls = []
    for scene, (image_id, cands, recall) in zip(corpus.scenes, results):
        scenes.append({
            "image_id": image_id,
            "recall": recall,
            "candidates": [[c.subject_index, c.object_index, c.score, c.provenance.value] for c in cands],
        })
        if scene.triples:
            recalls.append(recall)
    summary = {
        "mode": args.mode,
        "scenes": len(scenes),
        "candidates": sum(len(s["candidates"]) for s in scenes),
        "mean_recall": float(np.mean(recalls)) if recalls else 0.0,
        "pooled_recall": _pooled_recall(corpus, results),
    }
    doc = {"format": "aerial-sgg-candidates", "version": 1, "run_config": _echo(args, cfg),
           "summary": summary, "scenes": scenes}
    _write(args.out, json.dumps(doc, indent=1) + "\n")
    logger.info("%s: %d candidates, recall %.4f", args.mode, summary["candidates"], summary["pooled_recall"])
    return 0


def _pooled_recall(corpus, results) -> float:
    hit = total = 0
    for scene, (_, cands, _) in zip(corpus.scenes, results):
        pairs = {c.pair for c in cands}
        gt = {(s, o) for s, o, _ in scene.triple_indices()}
        hit += len(gt & pairs)
        total += len(gt)
    return hit / total if total else 0.0


def _priors_for(args, cfg, corpus):
    if args.priors:
        return load_priors(args.priors)
    return fit_gaussians(build_priors(corpus, _scale(cfg, "zoom_in"), _scale(cfg, "zoom_out")))


def cmd_train(args, cfg) -> int:
    corpus = _select_part(load_corpus(args.corpus), cfg)
    lpg_cfg = _lpg_config(cfg)
    priors = _priors_for(args, cfg, corpus) if lpg_cfg.candidate_source == "abs" else None
    model, trace = train(corpus, priors, lpg_cfg, _prd_config(cfg))
    _write(args.out, dumps_model(model, corpus.vocab, _echo(args, cfg)))
    _write(_sibling(args.out, ".loss.csv"), dumps_loss_trace(trace))
    logger.info("trained %d epochs; final mean loss %.6f", len(trace), trace[-1] if trace else float("nan"))
    return 0


def cmd_eval(args, cfg) -> int:
    corpus = _select_part(load_corpus(args.corpus), cfg)
    with open(args.model, encoding="utf-8") as fh:
        model = loads_model(fh.read(), corpus.vocab)
    ecfg = _eval_config(cfg)
    priors = load_priors(args.priors) if args.priors else None
    if ecfg.candidate_source == "abs" and priors is None:
        raise ValueError("--priors is required for ABS candidates")
    detections = None
    if args.detections:
        with open(args.detections, encoding="utf-8") as fh:
            detections = parse_detections(fh, corpus.vocab, corpus)
        if "SGDet" not in ecfg.tasks:
            ecfg = EvalConfig(ecfg.ks, ecfg.tasks + ("SGDet",), ecfg.rank_by, ecfg.graph_constraint,
                              ecfg.iou_threshold, ecfg.candidate_source, ecfg.prd)
    report = evaluate(model, corpus, priors, ecfg, detections)
    _write(args.out, report.to_json(_echo(args, cfg)))
    if args.out and str(args.out) != "-":
        _write(_sibling(args.out, ".tsv"), report.to_tsv())
    else:
        sys.stderr.write(report.to_tsv())
    return 0


def cmd_synth(args, cfg) -> int:
    s = cfg["synth"]
    if args.scenes is not None:
        s = dict(s, n_scenes=args.scenes)
    scfg = SynthConfig(seed=stream_seed(cfg["seed"], "synth"), **{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
    corpus, manifest = generate_corpus(scfg)
    echo = _echo(args, cfg)
    manifest["run_config"] = echo
    _write(args.out, serialize_corpus(corpus, {"run_config": echo}))
    if args.out and str(args.out) != "-":
        _write(_sibling(args.out, ".manifest.json"), json.dumps(manifest, indent=1) + "\n")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "stats": cmd_stats,
    "build-priors": cmd_build_priors,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def _override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file layered over the defaults")
    common.add_argument("--seed", type=int, help="master seed (split, init and synth streams derive from it)")
    common.add_argument("--workers", type=int, help="worker processes for per-scene work")
    common.add_argument("--out", help="output path ('-' or omitted: stdout)")
    common.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="override a dotted config key, e.g. lpg.epochs=50")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aerial-sgg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def corpus_cmd(name, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("corpus")
        return p

    corpus_cmd("validate", "parse a corpus and report connectivity warnings")
    corpus_cmd("stats", "per-image means and category histograms")
    corpus_cmd("build-priors", "build the category-pair prior dictionary")
    p = corpus_cmd("filter", "candidate pairs per scene with recall summary")
    p.add_argument("--priors")
    p.add_argument("--mode", choices=("abs", "iou"), default="abs")
    p = corpus_cmd("train", "train the graph network")
    p.add_argument("--priors", help="prior dictionary (built from the training corpus if omitted)")
    p = corpus_cmd("eval", "R@K / mR@K report")
    p.add_argument("--model", required=True)
    p.add_argument("--priors")
    p.add_argument("--detections", help="external detections file; enables SGDet")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus and manifest")
    p.add_argument("--scenes", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (CorpusError, ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
