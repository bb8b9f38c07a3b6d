"""Acceptance gate: twelve criteria, each at a pinned tolerance and time budget.

Every test prints one ``[PASS]`` / ``[FAIL]`` line.  Run standalone with
``python tests/test_acceptance.py`` for just the summary lines.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from shapely.geometry import Polygon

from frustum_forge.baselines import FusionInput, dbscan, fit_box_from_cluster, logit_fuse
from frustum_forge.cli import main as cli_main
from frustum_forge.config import (EvalConfig, FilterConfig, OracleConfig, RoundConfig, SearchSpec,
                                  SimulatorConfig, PipelineConfig)
from frustum_forge.errors import BoxBehindCamera
from frustum_forge.evaluation import aggregate, average_precision, evaluate
from frustum_forge.geometry import Box2D, Box3D, in_box, iou_bev, nms, project_box, yaw_diff_mod_pi
from frustum_forge.ingest import Detection2D, Vocabulary
from frustum_forge.oracle import rank_scene
from frustum_forge.propagator import (MemoryBank, bank_update, density_simulate, filter_overlap_with_base,
                                      geometry_simulate, harvest)
from frustum_forge.seeker import build_frustum, enumerate_candidates, frustum_members, seek_scene
from frustum_forge.selftrain import EmaLossNormalizer, NoisyOracleDetector, normalize_loss, run_selftrain
from frustum_forge.synth import SynthSpec, gen_scene
from frustum_forge.geometry import PointCloud, project_points

# ---- pinned tolerances and budgets ----------------------------------------
C1_BUDGET_S = 1.0
C2_MC_SAMPLES = 1_000_000
C2_IOU_TOL = 0.01
C2_BUDGET_S = 60.0
C3_RECALL_MIN = 0.85
C3_MATCH_DIST = 2.0
C3_YAW_TOL = math.pi / 10
C3_MIN_FRUSTUM_PTS = 20
C3_BUDGET_S = 60.0
C5_TARGET, C5_TOL = 0.95, 0.005
C5_BUDGET_S = 10.0
C6_SCENES = 10_000
C6_BUDGET_S = 120.0
C7_CONFIGS = 10_000
C8_HOMOGENEITY_TOL = 1e-12
C11_BUDGET_S = 120.0
C12_SWEEP_STEP = 1e-3
C12_YAW_TOL = 1e-6
C12_CONTAIN_SLACK = 1e-9


@pytest.fixture
def verdict(capsys):
    def emit(cid: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {cid:2d}: {detail}")
    return emit


def _poly(b: Box3D) -> Polygon:
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    pts = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        x, y = sx * b.l / 2, sy * b.w / 2
        pts.append((b.cx + c * x - s * y, b.cy + s * x + c * y))
    return Polygon(pts)


def _shapely_iou(a: Box3D, b: Box3D) -> float:
    pa, pb = _poly(a), _poly(b)
    inter = pa.intersection(pb).area
    return inter / (pa.area + pb.area - inter)


def _random_box(rng, spread=3.0, cid=0, score=None) -> Box3D:
    return Box3D(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-1, 1),
                 rng.uniform(0.5, 3.0), rng.uniform(0.5, 5.0), rng.uniform(0.5, 3.0),
                 rng.uniform(-math.pi, math.pi), cid, rng.uniform() if score is None else score)


# ---------------------------------------------------------------------------
# 1
# ---------------------------------------------------------------------------

def _tiny_scene():
    spec = SynthSpec(n_objects={2: (1, 1)}, seed=3, clutter_points=0)
    scene, dets = gen_scene(spec)
    return scene, dets[0], spec.anchors[2]


def test_c01_candidate_count(verdict):
    t0 = time.perf_counter()
    scene, det, anchor = _tiny_scene()
    cam = scene.camera(det.camera_id)
    counts = {}
    for name, spec in (("default", SearchSpec()), ("reduced", SearchSpec(k_d=2, k_o=3, k_s=1))):
        fr = build_frustum(scene.cloud, cam, det, spec)
        counts[name] = len(enumerate_candidates(fr, cam, anchor, spec, scene.cloud))
    dt = time.perf_counter() - t0
    ok = counts == {"default": 160, "reduced": 6} and dt < C1_BUDGET_S
    verdict(1, ok, f"candidates default={counts['default']} reduced={counts['reduced']} ({dt:.2f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 2
# ---------------------------------------------------------------------------

def _mc_iou(a: Box3D, b: Box3D, n: int, rng) -> float:
    """Hit-or-miss estimate over the joint bounding rectangle (float32 for speed)."""
    allc = np.vstack([np.array(_poly(a).exterior.coords), np.array(_poly(b).exterior.coords)])
    lo, hi = allc.min(0), allc.max(0)
    u = rng.random((2, n), dtype=np.float32)
    x = u[0] * np.float32(hi[0] - lo[0]) + np.float32(lo[0])
    y = u[1] * np.float32(hi[1] - lo[1]) + np.float32(lo[1])

    def inside(box):
        c, s = np.float32(math.cos(box.yaw)), np.float32(math.sin(box.yaw))
        lx = np.abs(c * x + s * y - np.float32(c * box.cx + s * box.cy))
        ly = np.abs(c * y - s * x - np.float32(-s * box.cx + c * box.cy))
        return (lx <= np.float32(box.l / 2)) & (ly <= np.float32(box.w / 2))

    ia, ib = inside(a), inside(b)
    inter = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia) + np.count_nonzero(ib) - inter
    return inter / union if union else 0.0


def test_c02_geometry_kernels(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)

    # in_box vs a plain per-point rotation written out by hand
    mismatches = 0
    for _ in range(10_000):
        b = _random_box(rng)
        p = np.array([b.cx, b.cy, b.cz]) + rng.uniform(-3, 3, 3)
        dx, dy, dz = p[0] - b.cx, p[1] - b.cy, p[2] - b.cz
        lx = math.cos(-b.yaw) * dx - math.sin(-b.yaw) * dy
        ly = math.sin(-b.yaw) * dx + math.cos(-b.yaw) * dy
        ref = abs(lx) <= b.l / 2 and abs(ly) <= b.w / 2 and abs(dz) <= b.h / 2
        mismatches += ref != in_box(p, b)

    # iou_bev vs Monte Carlo
    worst = 0.0
    for _ in range(1000):
        a = _random_box(rng, spread=1.5)
        b = _random_box(rng, spread=1.5)
        worst = max(worst, abs(iou_bev(a, b) - _mc_iou(a, b, C2_MC_SAMPLES, rng)))

    # nms vs exhaustive fixed-point search over all subsets
    nms_bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 8))
        boxes = [_random_box(rng, spread=2.5) for _ in range(n)]
        thr = float(rng.choice([0.0, 0.1, 0.2, 0.5]))
        order = sorted(range(n), key=lambda i: (-boxes[i].score, i))
        M = [[_shapely_iou(boxes[i], boxes[j]) for j in range(n)] for i in range(n)]
        valid = []
        for mask in itertools.product([0, 1], repeat=n):
            kept = {i for i in range(n) if mask[i]}
            good = all((i in kept) == all(M[i][j] <= thr for j in order[:order.index(i)] if j in kept)
                       for i in range(n))
            if good:
                valid.append(kept)
        got = {next(i for i in range(n) if boxes[i] is k) for k in nms(boxes, thr)}
        nms_bad += len(valid) != 1 or valid[0] != got

    dt = time.perf_counter() - t0
    ok = mismatches == 0 and worst <= C2_IOU_TOL and nms_bad == 0 and dt < C2_BUDGET_S
    verdict(2, ok, f"in_box mismatches={mismatches}, max |iou-MC|={worst:.4f}, "
                   f"nms mismatches={nms_bad} ({dt:.1f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 3 and 4
# ---------------------------------------------------------------------------

def _eligible(scene, box) -> bool:
    for cam in scene.cameras:
        try:
            r = project_box(box, cam)
        except BoxBehindCamera:
            continue
        if not (r.u_max > r.u_min and r.v_max > r.v_min):
            continue
        uv, depth = project_points(scene.cloud.points, cam)
        if len(frustum_members(uv, depth, Detection2D(cam.camera_id, box.class_id, 1.0, r))) >= C3_MIN_FRUSTUM_PTS:
            return True
    return False


def _matched(box, props) -> bool:
    return any(p.class_id == box.class_id
               and math.hypot(p.cx - box.cx, p.cy - box.cy) <= C3_MATCH_DIST
               and yaw_diff_mod_pi(p.yaw, box.yaw) <= C3_YAW_TOL for p in props)


_SUITE_CACHE = {}


def _recall_suite():
    if _SUITE_CACHE:
        return _SUITE_CACHE
    t0 = time.perf_counter()
    spec = SynthSpec(seed=1000)
    modes = {"both": {}, "density": {"use_alignment": False}, "alignment": {"use_density": False}}
    hits = {m: 0 for m in modes}
    n_elig = n_obj = 0
    for i in range(50):
        scene, dets = gen_scene(replace(spec, seed=spec.seed + i))
        sets = seek_scene(scene, dets, spec.anchors, SearchSpec())
        props = {m: rank_scene(scene, sets, OracleConfig(alpha_iou=2.0), **kw)[0] for m, kw in modes.items()}
        for gt in scene.all_gt:
            n_obj += 1
            if not _eligible(scene, gt):
                continue
            n_elig += 1
            for m in modes:
                hits[m] += _matched(gt, props[m])
    _SUITE_CACHE.update(recall={m: hits[m] / n_elig for m in modes}, n_elig=n_elig, n_obj=n_obj,
                        seconds=time.perf_counter() - t0)
    return _SUITE_CACHE


def test_c03_synthetic_recall(verdict):
    res = _recall_suite()
    r = res["recall"]["both"]
    ok = r >= C3_RECALL_MIN and res["seconds"] < C3_BUDGET_S
    verdict(3, ok, f"recall {r:.3f} on {res['n_elig']}/{res['n_obj']} eligible objects "
                   f"(need >= {C3_RECALL_MIN}) ({res['seconds']:.1f}s)")
    assert ok


def test_c04_criterion_ablation(verdict):
    r = _recall_suite()["recall"]
    ok = r["both"] >= r["density"] and r["both"] >= r["alignment"]
    verdict(4, ok, f"recall both={r['both']:.3f} density-only={r['density']:.3f} "
                   f"alignment-only={r['alignment']:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 5
# ---------------------------------------------------------------------------

def test_c05_density_simulator(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    pts = np.zeros((1000, 3))
    retained = np.empty(100_000)
    max_drop = 0
    for t in range(len(retained)):
        n = len(density_simulate(pts, 0.2, rng))
        retained[t] = n / 1000
        max_drop = max(max_drop, 1000 - n)
    dt = time.perf_counter() - t0
    mean = retained.mean()
    ok = abs(mean - C5_TARGET) <= C5_TOL and max_drop <= 500 and dt < C5_BUDGET_S
    verdict(5, ok, f"mean retained {mean:.4f} (target {C5_TARGET}±{C5_TOL}), max drop {max_drop} ({dt:.1f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 6
# ---------------------------------------------------------------------------

def test_c06_geometry_simulator(verdict):
    t0 = time.perf_counter()
    pool = [gen_scene(SynthSpec(seed=600 + i))[0] for i in range(10)]
    entries = [e for s in pool for e in harvest(s, s.novel_gt)]
    bank, _ = bank_update(MemoryBank(60), entries, FilterConfig(min_points=1))
    overlaps = cross_bad = pasted_total = 0
    cfg = SimulatorConfig()
    for k in range(C6_SCENES):
        out, pasted = geometry_simulate(bank, pool[k % len(pool)], cfg, k)
        pasted_total += len(pasted)
        g = out.all_gt
        for i in range(len(g)):
            for j in range(i + 1, len(g)):
                if iou_bev(g[i], g[j]) > 0:
                    overlaps += 1
        if k % 100 == 0:   # independent polygon check on a subsample
            for i in range(len(g)):
                for j in range(i + 1, len(g)):
                    cross_bad += _poly(g[i]).intersection(_poly(g[j])).area > 1e-9

    # zero noise: pasted poses equal bank poses exactly
    empty = replace(pool[0], base_gt=[], novel_gt=[])
    entry = bank.entries()[0]
    one = MemoryBank(60, {entry.class_id: [entry]})
    _, pz = geometry_simulate(one, empty, replace(cfg, sigma_xyz=0.0, sigma_theta=0.0, n_paste=1), 1)
    exact = len(pz) == 1 and pz[0].as_array().tolist() == entry.box.as_array().tolist()
    dt = time.perf_counter() - t0
    ok = overlaps == 0 and cross_bad == 0 and exact and pasted_total > 0 and dt < C6_BUDGET_S
    verdict(6, ok, f"{C6_SCENES} scenes, {pasted_total} pastes, overlapping pairs={overlaps} "
                   f"(polygon audit {cross_bad}), zero-noise exact={exact} ({dt:.1f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 7
# ---------------------------------------------------------------------------

def test_c07_overlap_filter(verdict):
    beta = 0.1
    # IoU exactly 0.1: 11 x 1 footprints shifted 9 m -> 2 / 20
    base = Box3D(0, 0, 0, 1.0, 11.0, 1.0, 0.0, 0)
    at = Box3D(9.0, 0, 0, 1.0, 11.0, 1.0, 0.0, 2)
    above = Box3D(8.9, 0, 0, 1.0, 11.0, 1.0, 0.0, 2)
    boundary_ok = (iou_bev(at, base) == 0.1 and filter_overlap_with_base([at], [base], beta) == [at]
                   and filter_overlap_with_base([above], [base], beta) == [])

    rng = np.random.default_rng(7)
    bad = skipped = 0
    for _ in range(C7_CONFIGS):
        novels = [_random_box(rng, spread=4, cid=2) for _ in range(int(rng.integers(0, 4)))]
        bases = [_random_box(rng, spread=4, cid=0) for _ in range(int(rng.integers(0, 4)))]
        ref_ious = [[_shapely_iou(n, b) for b in bases] for n in novels]
        if any(abs(v - beta) < 1e-9 for row in ref_ious for v in row):
            skipped += 1
            continue
        ref = [n for n, row in zip(novels, ref_ious) if not any(v > beta for v in row)]
        bad += filter_overlap_with_base(novels, bases, beta) != ref
    ok = boundary_ok and bad == 0
    verdict(7, ok, f"boundary keep/remove={boundary_ok}, mismatches={bad}/{C7_CONFIGS} (ambiguous skipped {skipped})")
    assert ok


# ---------------------------------------------------------------------------
# 8
# ---------------------------------------------------------------------------

def test_c08_loss_normalizer(verdict):
    rng = np.random.default_rng(8)
    alpha0 = all(normalize_loss(lb, ln, EmaLossNormalizer(0.0, 0.99, eb, en))[0] == lb
                 for lb, ln, eb, en in rng.uniform(0, 10, size=(1000, 4)))
    equal = normalize_loss(2.0, 1.0, EmaLossNormalizer(0.5, 0.99, 1.3, 1.3))[0]
    exact = equal == float(Fraction(5, 3))
    worst = 0.0
    for _ in range(1000):
        lb, ln = rng.uniform(0, 10, 2)
        st = EmaLossNormalizer(rng.uniform(0, 2), 0.99, rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        c = rng.uniform(0.01, 100)
        l1 = normalize_loss(lb, ln, st)[0]
        lc = normalize_loss(c * lb, c * ln, st)[0]
        worst = max(worst, abs(lc - c * l1) / max(1.0, abs(c * l1)))
    ok = alpha0 and exact and worst <= C8_HOMOGENEITY_TOL
    verdict(8, ok, f"alpha=0 -> L_B: {alpha0}; equal-EMA case = {equal!r} (5/3 exact: {exact}); "
                   f"max homogeneity error {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 9
# ---------------------------------------------------------------------------

def test_c09_logit_fusion(verdict):
    grid_bad = 0
    for k in range(11):
        p = k / 10
        for g in (0.0, 0.2, 0.5):
            want = 3 if Fraction(k, 10) <= Fraction(g).limit_denominator(10) else 7
            grid_bad += logit_fuse(FusionInput(3, 7, p, g)) != want
    boundary = logit_fuse(FusionInput(3, 7, 0.2, 0.2)) == 3
    ok = grid_bad == 0 and boundary
    verdict(9, ok, f"boundary p=gamma=0.2 -> 3D label: {boundary}; grid mismatches {grid_bad}/33")
    assert ok


# ---------------------------------------------------------------------------
# 10
# ---------------------------------------------------------------------------

def _at(x, score, cid=0):
    return Box3D(x, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, cid, score)


def test_c10_eval_oracle(verdict):
    cfg = EvalConfig(dist_thresholds=(1.0,))
    gts = [_at(0, 1), _at(10, 1), _at(20, 1), _at(30, 1)]
    # ranked: TP(0.9) FP(0.8) TP(0.7) FP(0.6) TP(0.5); GT 30 never found
    preds = [_at(0.2, 0.9), _at(50, 0.8), _at(10.3, 0.7), _at(60, 0.6), _at(19.6, 0.5)]
    # PR points: (1/4, 1), (1/4, 1/2), (2/4, 2/3), (2/4, 1/2), (3/4, 3/5)
    # envelope: r in (0, .25] -> 1; (.25, .5] -> 2/3; (.5, .75] -> 3/5; (.75, 1] -> 0
    manual = ((Fraction(1, 4) - Fraction(1, 10)) * 1 + Fraction(1, 4) * Fraction(2, 3)
              + Fraction(1, 4) * Fraction(3, 5)) / (1 - Fraction(1, 10))
    hand = average_precision(preds, gts, cfg)

    # floor case: precision 1/9 reached only as the envelope past r = 1/2 is >= 0.1
    gts2 = [_at(0, 1), _at(10, 1)]
    preds2 = [_at(0, 0.9), _at(40, 0.8), _at(50, 0.7), _at(60, 0.6), _at(9.9, 0.5)]
    # PR: (1/2,1) (1/2,1/2) (1/2,1/3) (1/2,1/4) (1,2/5)
    manual2 = ((Fraction(1, 2) - Fraction(1, 10)) * 1 + Fraction(1, 2) * Fraction(2, 5)) / Fraction(9, 10)
    hand2 = average_precision(preds2, gts2, cfg)

    vocab = Vocabulary(((0, "a"),), ((1, "b"),))
    scene_gt = [_at(0, 1, 0), _at(5, 1, 1), _at(9, 1, 1)]
    perfect = aggregate(evaluate([(scene_gt, scene_gt)], vocab), vocab)
    empty = aggregate(evaluate([([], scene_gt)], vocab), vocab)
    ok = (hand == float(manual) and hand2 == float(manual2)
          and perfect["mAP"] == 1.0 and empty["mAP"] == 0.0)
    verdict(10, ok, f"hand AP {hand:.6f} vs manual {float(manual):.6f}; floor case {hand2:.6f} vs "
                    f"{float(manual2):.6f}; perfect mAP {perfect['mAP']}; empty mAP {empty['mAP']}")
    assert ok


# ---------------------------------------------------------------------------
# 11
# ---------------------------------------------------------------------------

def test_c11_selftrain_convergence(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = PipelineConfig()
    spec = SynthSpec(seed=110)
    scenes, props = [], {}
    for i in range(20):
        s, d = gen_scene(replace(spec, seed=spec.seed + i))
        scenes.append(s)
        novel = set(spec.vocabulary().novel_ids)
        props[s.scene_id] = [b for b in rank_scene(s, seek_scene(s, d, spec.anchors, cfg.search), cfg.oracle)[0]
                             if b.class_id in novel]
    det = NoisyOracleDetector(noise_sigma=0.3, seed=11)
    _, reps, _ = run_selftrain(scenes, det, props, replace(cfg.rounds, n_rounds=3), cfg.simulator,
                               cfg.filters, novel_ids=spec.vocabulary().novel_ids)
    conf = [r.bank_mean_confidence for r in reps]
    rec = [r.pseudo_recall for r in reps]
    monotone = all(b >= a for a, b in zip(conf, conf[1:])) and all(b >= a for a, b in zip(rec, rec[1:]))

    outs = []
    for tag in ("a", "b"):
        code = cli_main(["pipeline", "--n", "4", "--seed", "7", "--out", str(tmp_path / tag)])
        outs.append((code, (tmp_path / tag / "report.json").read_bytes(), (tmp_path / tag / "bank.json").read_bytes()))
    deterministic = outs[0][0] == 0 and outs[0] == outs[1]
    dt = time.perf_counter() - t0
    ok = monotone and deterministic and dt < C11_BUDGET_S
    verdict(11, ok, f"bank mean conf {[round(c, 4) for c in conf]}, pseudo recall {[round(r, 4) for r in rec]}, "
                    f"byte-deterministic={deterministic} ({dt:.1f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 12
# ---------------------------------------------------------------------------

def _quadratic_dbscan(X, eps, min_pts):
    n = len(X)
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    nbrs = [np.flatnonzero(D[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in nbrs]
    labels = [-1] * n
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        stack = [i]
        while stack:
            j = stack.pop()
            for k in nbrs[j]:
                if labels[k] == -1:
                    labels[k] = cid
                    if core[k]:
                        stack.append(k)
        cid += 1
    return labels


def _partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(int(l), set()).add(i)
    noise = frozenset(groups.pop(-1, set()))
    return noise, {frozenset(g) for g in groups.values()}


def test_c12_dbscan_and_box_fit(verdict):
    rng = np.random.default_rng(12)
    centers = rng.uniform(-20, 20, size=(8, 3))
    X = np.concatenate([c + rng.normal(0, 0.8, size=(55, 3)) for c in centers]
                       + [rng.uniform(-25, 25, size=(60, 3))])[:500]
    same = _partition(dbscan(X, 1.5, 5)) == _partition(_quadratic_dbscan(X, 1.5, 5))

    yaw = 0.3
    c, s = math.cos(yaw), math.sin(yaw)
    u = rng.uniform(-2.0, 2.0, 400)
    v = rng.uniform(-0.8, 0.8, 400)
    u[:4], v[:4] = [2, 2, -2, -2], [0.8, -0.8, 0.8, -0.8]
    pts = np.stack([3 + c * u - s * v, -1 + s * u + c * v, rng.uniform(0, 1.5, 400)], 1)
    box = fit_box_from_cluster(pts, 2)
    yaw_err = abs(((box.yaw - yaw) + math.pi / 4) % (math.pi / 2) - math.pi / 4)

    def area_at(theta):
        cc, ss = math.cos(theta), math.sin(theta)
        a = pts[:, 0] * cc + pts[:, 1] * ss
        b = -pts[:, 0] * ss + pts[:, 1] * cc
        return (a.max() - a.min()) * (b.max() - b.min())

    sweep_min = min(area_at(t) for t in np.arange(0, math.pi / 2, C12_SWEEP_STEP))
    area_ok = box.w * box.l <= sweep_min + 1e-6

    contained = True
    for _ in range(20):
        cl = rng.normal(0, 1, size=(int(rng.integers(3, 60)), 3)) * rng.uniform(0.2, 3, 3)
        b = fit_box_from_cluster(cl, 0)
        grown = b.replace(w=b.w + 2 * C12_CONTAIN_SLACK, l=b.l + 2 * C12_CONTAIN_SLACK, h=b.h + 2 * C12_CONTAIN_SLACK)
        contained &= all(in_box(p, grown) for p in cl)
    ok = same and yaw_err <= C12_YAW_TOL and area_ok and contained
    verdict(12, ok, f"dbscan partition equal={same}; yaw error {yaw_err:.2e}; "
                    f"area {box.w * box.l:.6f} <= sweep {sweep_min:.6f}: {area_ok}; containment={contained}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
