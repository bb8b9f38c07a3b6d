"""``frustum-forge`` command line: one subcommand per stage plus ``pipeline``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
Every output file is written atomically; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import cluster_proposals, fuse_predictions
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, FormatError, FrustumForgeError
from .evaluation import aggregate, evaluate, pr_curve
from .ingest import (Scene, atomic_write_bytes, box_to_record, detection_from_record, detection_to_record,
                     load_anchors, load_detections, load_proposals, load_scene, load_vocab, read_json,
                     save_anchors, save_detections, save_proposals, save_scene, save_vocab, write_json,
                     box_from_record)
from .oracle import rank_scene
from .propagator import geometry_simulate, load_bank, save_bank
from .seeker import CandidateSet, Frustum, seek_scene
from .selftrain import NoisyOracleDetector, run_selftrain
from .synth import SynthSpec, gen_dataset

log = logging.getLogger("frustum_forge")

THREADS_ENV = "FRUSTUM_FORGE_THREADS"


class RunReport:
    """Counts, metrics and (optionally) timings for one invocation."""

    def __init__(self, subcommand: str, cfg: PipelineConfig | None, seed, timings: bool = False):
        self.subcommand = subcommand
        self.cfg = cfg
        self.seed = seed
        self.counts: dict = {}
        self.metrics: dict = {}
        self.timings_ms: dict | None = {} if timings else None

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        if self.timings_ms is not None:
            self.timings_ms[name] = round((time.perf_counter() - t0) * 1000.0, 3)

    def as_dict(self) -> dict:
        out = {"subcommand": self.subcommand, "seed": self.seed,
               "config": self.cfg.to_flat() if self.cfg else None,
               "counts": self.counts, "metrics": self.metrics}
        if self.timings_ms is not None:
            out["timings_ms"] = self.timings_ms
        return out


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _threads(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None:
            return 1
        try:
            n = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _pmap(fn, items, threads: int):
    """Order-preserving map; results never depend on the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    flat = {}
    for key in ("k_d", "k_o", "k_s", "q_lo", "q_hi", "alpha_iou", "n_rounds", "gamma_fuse",
                "cluster_eps", "cluster_min_pts", "label_weight", "pseudo_score_threshold"):
        v = getattr(args, key, None)
        if v is not None:
            flat[key] = v
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    return cfg.with_overrides(flat) if flat else cfg


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())


def _dataset_dirs(root: Path) -> list[Path]:
    dirs = sorted(p.parent for p in root.glob("*/scene.json"))
    if not dirs:
        raise DataError(f"no */scene.json under {root}")
    return dirs


def _candidates_to_record(cs: CandidateSet) -> dict:
    fr = cs.frustum
    return {"camera_id": fr.camera_id, "detection": detection_to_record(fr.detection),
            "n_points": int(len(fr.member_indices)), "d_min": fr.d_min, "d_max": fr.d_max,
            "candidates": [box_to_record(b) for b in cs.candidates]}


def _candidates_from_record(rec) -> CandidateSet:
    try:
        det = detection_from_record(rec["detection"])
        fr = Frustum(str(rec["camera_id"]), det, np.zeros(int(rec["n_points"]), dtype=np.int64),
                     float(rec["d_min"]), float(rec["d_max"]))
        return CandidateSet(fr, [box_from_record(b) for b in rec["candidates"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad candidate set record: {exc}") from exc


def _rank_kwargs(criteria: str) -> dict:
    return {"both": {}, "density": {"use_alignment": False},
            "alignment": {"use_density": False}}[criteria]


def _metrics_record(results, vocab) -> dict:
    try:
        agg = aggregate(results, vocab)
    except FrustumForgeError:
        agg = {"mAP": None, "AP_B": None, "AP_N": None, "AR_N": None}
    return {"aggregate": agg, "per_class": {str(c): r.as_dict() for c, r in results.items()}}


def _pr_rows(stage, pairs, vocab, cfg):
    rows = []
    for cid in vocab.all_ids:
        per_scene = [([p for p in P if p.class_id == cid], [g for g in G if g.class_id == cid]) for P, G in pairs]
        for dist in cfg.eval.dist_thresholds:
            for k, (s, r, p) in enumerate(pr_curve(cid, per_scene, dist), start=1):
                rows.append([stage, cid, dist, k, f"{s:.6f}", f"{r:.6f}", f"{p:.6f}"])
    return rows


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args):
    spec = SynthSpec.from_record(read_json(args.spec)) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    data = gen_dataset(spec, args.n)
    out = Path(args.out)
    for scene, dets in data:
        save_scene(out / scene.scene_id / "scene.json", scene)
        save_detections(out / scene.scene_id / "detections.json", dets)
    save_vocab(out / "vocab.json", spec.vocabulary())
    save_anchors(out / "anchors.json", spec.anchors)
    log.info("wrote %d scenes to %s", len(data), out)
    return 0


def cmd_seek(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    dets = load_detections(args.detections, scene)
    anchors = load_anchors(args.anchors)
    sets = seek_scene(scene, dets, anchors, cfg.search)
    write_json(args.out, [_candidates_to_record(cs) for cs in sets])
    log.info("%d detections -> %d candidate sets", len(dets), len(sets))
    return 0


def cmd_rank(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    raw = read_json(args.candidates)
    if not isinstance(raw, list):
        raise FormatError(f"{args.candidates}: expected a JSON array")
    sets = [_candidates_from_record(r) for r in raw]
    for cs in sets:
        scene.camera(cs.frustum.camera_id)
    props, rejected = rank_scene(scene, sets, cfg.oracle, **_rank_kwargs(args.criteria))
    save_proposals(args.out, props)
    log.info("%d proposals, %d frustums rejected", len(props), rejected)
    return 0


def cmd_propagate(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    bank = load_bank(args.bank)
    seed = cfg.rounds.seed if args.seed is None else args.seed
    out_scene, pasted = geometry_simulate(bank, scene, cfg.simulator, seed)
    save_scene(args.out, out_scene)
    log.info("pasted %d instances", len(pasted))
    return 0


def _load_dataset(root: Path, det_root: Path | None):
    scenes, dets = [], []
    for d in _dataset_dirs(root):
        s = load_scene(d / "scene.json")
        dpath = (det_root / d.name if det_root else d) / "detections.json"
        scenes.append(s)
        dets.append(load_detections(dpath, s))
    return scenes, dets


def _vocab_anchors(args, root: Path):
    vocab = load_vocab(args.vocab or root / "vocab.json")
    anchors = load_anchors(args.anchors or root / "anchors.json", vocab)
    return vocab, anchors


def _seek_rank(scenes, dets, anchors, cfg, threads, report):
    def work(pair):
        s, d = pair
        sets = seek_scene(s, d, anchors, cfg.search)
        props, rej = rank_scene(s, sets, cfg.oracle)
        return sets, props, rej

    res = _pmap(work, list(zip(scenes, dets)), threads)
    report.counts.update({
        "scenes": len(scenes),
        "detections": sum(len(d) for d in dets),
        "frustums": sum(len(r[0]) for r in res),
        "frustums_empty": sum(len(d) for d in dets) - sum(len(r[0]) for r in res),
        "candidates": sum(len(cs) for r in res for cs in r[0]),
        "proposals": sum(len(r[1]) for r in res),
        "oracle_rejected": sum(r[2] for r in res),
    })
    return res


def _selftrain(scenes, props, vocab, cfg, args, report):
    novel = set(vocab.novel_ids)
    seeker_novel = {s.scene_id: [b for b in p if b.class_id in novel] for s, p in zip(scenes, props)}
    det = NoisyOracleDetector(noise_sigma=args.noise_sigma, miss_rate=args.miss_rate, seed=cfg.rounds.seed)
    bank, reps, pseudos = run_selftrain(scenes, det, seeker_novel, cfg.rounds, cfg.simulator, cfg.filters,
                                        novel_ids=vocab.novel_ids)
    report.counts["pastes"] = sum(r.n_pastes for r in reps)
    report.counts["evictions"] = sum(r.bank_update.get("evicted", 0) for r in reps)
    report.counts["pseudos"] = reps[-1].n_pseudos if reps else 0
    report.counts["bank_size"] = len(bank)
    report.metrics["rounds"] = [r.as_dict() for r in reps]
    return bank, pseudos, seeker_novel


def cmd_selftrain(args):
    cfg = _config(args)
    if args.rounds is not None:
        cfg = cfg.with_overrides({"n_rounds": args.rounds})
    root = Path(args.dataset)
    report = RunReport("selftrain", cfg, cfg.rounds.seed, args.timings)
    vocab, anchors = _vocab_anchors(args, root)
    with report.stage("load"):
        scenes, dets = _load_dataset(root, Path(args.detections) if args.detections else None)
    with report.stage("seek_rank"):
        res = _seek_rank(scenes, dets, anchors, cfg, _threads(args), report)
    with report.stage("selftrain"):
        bank, _, _ = _selftrain(scenes, [r[1] for r in res], vocab, cfg, args, report)
    save_bank(args.bank_out, bank)
    if args.report:
        write_json(args.report, report.as_dict())
    return 0


def cmd_fuse(args):
    preds = load_proposals(args.pred3d)
    raw = read_json(args.vlm)
    if not isinstance(raw, list):
        raise FormatError(f"{args.vlm}: expected a JSON array of {{label, score}} records")
    try:
        vlm = [(int(r["label"]), float(r["score"])) for r in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{args.vlm}: bad VLM record ({exc})") from exc
    cfg = _config(args)
    try:
        fused = fuse_predictions(preds, vlm, cfg.fusion.gamma_fuse)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_proposals(args.out, fused)
    return 0


def cmd_cluster(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    labels = read_json(args.labels)
    if not isinstance(labels, list) or len(labels) != len(scene.cloud):
        raise FormatError(f"{args.labels}: need one integer label per point ({len(scene.cloud)})")
    if any(isinstance(x, bool) or not isinstance(x, int) for x in labels):
        raise FormatError(f"{args.labels}: labels must be integers (-1 = unlabeled)")
    boxes = cluster_proposals(scene.cloud, labels, cfg.fusion)
    save_proposals(args.out, boxes)
    log.info("%d clusters boxed", len(boxes))
    return 0


def cmd_eval(args):
    cfg = _config(args)
    preds = load_proposals(args.pred)
    scene = load_scene(args.gt)
    vocab = load_vocab(args.vocab)
    report = RunReport("eval", cfg, None)
    pairs = [(preds, scene.all_gt)]
    results = evaluate(pairs, vocab, cfg.eval)
    aggregate(results, vocab)  # raises EmptyClassSet when nothing is annotated
    report.metrics = _metrics_record(results, vocab)
    report.counts = {"predictions": len(preds), "ground_truth": len(scene.all_gt)}
    if args.plot_data:
        _write_csv(Path(args.plot_data) / "pr_curves.csv",
                   ["stage", "class_id", "dist", "rank", "score", "recall", "precision"],
                   _pr_rows("eval", pairs, vocab, cfg))
    write_json(args.out, report.as_dict())
    return 0


def _ablation_rows(scenes, res, vocab, cfg):
    """Novel recall at 2 m of seeker proposals under oracle variants."""
    novel = set(vocab.novel_ids)

    def recall(props_per_scene):
        from .evaluation import match
        tp = n = 0
        for s, props in zip(scenes, props_per_scene):
            for cid in novel:
                g = [b for b in s.novel_gt if b.class_id == cid]
                n += len(g)
                tp += match([p for p in props if p.class_id == cid], g, 2.0).n_tp
        return tp / n if n else 0.0

    rows = []
    for crit in ("both", "density", "alignment"):
        props = [rank_scene(s, r[0], cfg.oracle, **_rank_kwargs(crit))[0] for s, r in zip(scenes, res)]
        rows.append(["criteria", crit, f"{recall(props):.6f}"])
    for a in (0.0, 0.5, 1.0, 2.0, 4.0):
        oc = replace(cfg.oracle, alpha_iou=a)
        props = [rank_scene(s, r[0], oc)[0] for s, r in zip(scenes, res)]
        rows.append(["alpha_iou", a, f"{recall(props):.6f}"])
    return rows


def cmd_pipeline(args):
    cfg = _config(args)
    if args.rounds is not None:
        cfg = cfg.with_overrides({"n_rounds": args.rounds})
    threads = _threads(args)
    report = RunReport("pipeline", cfg, cfg.rounds.seed, args.timings)
    out = Path(args.out)

    with report.stage("load"):
        if args.dataset:
            root = Path(args.dataset)
            vocab, anchors = _vocab_anchors(args, root)
            scenes, dets = _load_dataset(root, None)
        else:
            spec = SynthSpec.from_record(read_json(args.spec)) if args.spec else SynthSpec()
            spec = replace(spec, seed=cfg.rounds.seed)
            data = gen_dataset(spec, args.n)
            scenes, dets = [d[0] for d in data], [d[1] for d in data]
            vocab, anchors = spec.vocabulary(), spec.anchors
    with report.stage("seek_rank"):
        res = _seek_rank(scenes, dets, anchors, cfg, threads, report)
    props = [r[1] for r in res]
    with report.stage("selftrain"):
        bank, pseudos, seeker_novel = _selftrain(scenes, props, vocab, cfg, args, report)
    with report.stage("propagate"):
        augmented = [geometry_simulate(bank, s, cfg.simulator, [cfg.rounds.seed, 99, i])
                     for i, s in enumerate(scenes)]
        report.counts["final_pastes"] = sum(len(a[1]) for a in augmented)
    with report.stage("eval"):
        from .propagator import combine_sources
        # base classes keep their seeker proposals; novel ones get the combined labels
        novel = set(vocab.novel_ids)
        final = [[b for b in p if b.class_id not in novel]
                 + combine_sources(seeker_novel[s.scene_id], pseudos.get(s.scene_id, []), s.base_gt,
                                   s.cloud, cfg.filters)
                 for s, p in zip(scenes, props)]
        stages = {"seeker": list(zip(props, [s.all_gt for s in scenes])),
                  "final": list(zip(final, [s.all_gt for s in scenes]))}
        for name, pairs in stages.items():
            report.metrics[name] = _metrics_record(evaluate(pairs, vocab, cfg.eval), vocab)

    # outputs only after every stage succeeded
    save_bank(out / "bank.json", bank)
    for s, p, f in zip(scenes, props, final):
        save_proposals(out / "proposals" / f"{s.scene_id}.json", p)
        save_proposals(out / "labels" / f"{s.scene_id}.json", f)
    if args.plot_data:
        pd = Path(args.plot_data)
        rows = []
        for name, pairs in stages.items():
            rows.extend(_pr_rows(name, pairs, vocab, cfg))
        _write_csv(pd / "pr_curves.csv", ["stage", "class_id", "dist", "rank", "score", "recall", "precision"], rows)
        _write_csv(pd / "ablation.csv", ["sweep", "value", "novel_recall_2m"],
                   _ablation_rows(scenes, res, vocab, cfg))
        _write_csv(pd / "rounds.csv", ["round", "pseudo_recall", "pseudo_precision", "bank_mean_confidence"],
                   [[r["round_index"], r["pseudo_recall"], r["pseudo_precision"], r["bank_mean_confidence"]]
                    for r in report.metrics["rounds"]])
    write_json(out / "report.json", report.as_dict())
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p, seed=True, threads=False):
    p.add_argument("--config", help="flat config.json (CLI flags take precedence)")
    if seed:
        p.add_argument("--seed", type=int)
    if threads:
        p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV})")


def _search_flags(p):
    p.add_argument("--k-d", dest="k_d", type=int)
    p.add_argument("--k-o", dest="k_o", type=int)
    p.add_argument("--k-s", dest="k_s", type=int)
    p.add_argument("--q-lo", dest="q_lo", type=float)
    p.add_argument("--q-hi", dest="q_hi", type=float)
    p.add_argument("--alpha-iou", dest="alpha_iou", type=float)


def _selftrain_flags(p):
    p.add_argument("--rounds", type=int)
    p.add_argument("--noise-sigma", type=float, default=0.3, help="pose noise of the oracle test detector (m)")
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--vocab")
    p.add_argument("--anchors")
    p.add_argument("--timings", action="store_true", help="record wall-clock stage timings in the report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frustum-forge", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes + detections")
    p.add_argument("--spec")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("seek", help="lift detections to frustums and enumerate candidates")
    p.add_argument("--scene", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--out", required=True)
    _common(p, seed=False)
    _search_flags(p)
    p.set_defaults(fn=cmd_seek)

    p = sub.add_parser("rank", help="pick the best candidate per frustum")
    p.add_argument("--scene", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--criteria", choices=("both", "density", "alignment"), default="both")
    p.add_argument("--alpha-iou", dest="alpha_iou", type=float)
    _common(p, seed=False)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("propagate", help="paste bank instances into a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(fn=cmd_propagate)

    p = sub.add_parser("selftrain", help="self-training rounds over a scene directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", help="directory mirroring --dataset with detections.json files")
    p.add_argument("--bank-out", required=True)
    p.add_argument("--report")
    _common(p, threads=True)
    _selftrain_flags(p)
    p.set_defaults(fn=cmd_selftrain)

    p = sub.add_parser("fuse", help="3D/VLM label fusion")
    p.add_argument("--pred3d", required=True)
    p.add_argument("--vlm", required=True)
    p.add_argument("--gamma", dest="gamma_fuse", type=float)
    p.add_argument("--out", required=True)
    _common(p, seed=False)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("cluster", help="density-clustering proposals from per-point labels")
    p.add_argument("--scene", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--eps", dest="cluster_eps", type=float)
    p.add_argument("--min-pts", dest="cluster_min_pts", type=int)
    p.add_argument("--label-weight", dest="label_weight", type=float)
    p.add_argument("--out", required=True)
    _common(p, seed=False)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("eval", help="AP / AR of predictions against a scene's ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", help="directory for PR-curve CSVs")
    _common(p, seed=False)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="synth-or-load -> seek -> rank -> selftrain -> propagate -> eval")
    p.add_argument("--dataset", help="scene directory (default: generate synthetic scenes)")
    p.add_argument("--spec", help="synthetic spec JSON when generating")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", help="directory for PR-curve and ablation CSVs")
    _common(p, threads=True)
    _search_flags(p)
    _selftrain_flags(p)
    p.set_defaults(fn=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FrustumForgeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
