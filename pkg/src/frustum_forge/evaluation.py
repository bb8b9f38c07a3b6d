"""Center-distance matching and average precision per class, plus AP_B / AP_N / mAP / AR_N.

AP at one distance threshold is the area under the precision envelope
(precision at recall r is the best precision reached at any recall >= r) over
recall in [min_recall, 1].  Envelope values under ``min_precision`` count as
zero and the area is divided by ``1 - min_recall`` so a perfect detector
scores exactly 1.  The area is summed in exact rational arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .config import EvalConfig
from .errors import EmptyClassSet
from .geometry import Box3D
from .ingest import Vocabulary


@dataclass
class Matching:
    pairs: list            # (pred index, gt index)
    tp: list               # per prediction, in input order
    n_gt: int

    @property
    def n_tp(self) -> int:
        return sum(self.tp)

    @property
    def n_fp(self) -> int:
        return len(self.tp) - self.n_tp

    @property
    def n_fn(self) -> int:
        return self.n_gt - self.n_tp


def _order(preds: Sequence[Box3D]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))


def match(preds: Sequence[Box3D], gts: Sequence[Box3D], dist: float) -> Matching:
    """Greedy by descending score; each prediction takes the nearest unmatched GT within ``dist``."""
    taken = [False] * len(gts)
    tp = [False] * len(preds)
    pairs = []
    for i in _order(preds):
        p = preds[i]
        best, best_d = None, math.inf
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            d = math.hypot(p.cx - g.cx, p.cy - g.cy)
            if d <= dist and d < best_d:
                best, best_d = j, d
        if best is not None:
            taken[best] = True
            tp[i] = True
            pairs.append((i, best))
    return Matching(pairs, tp, len(gts))


def _frac(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def ap_from_ranked(scored_tp: Sequence[tuple], n_gt: int, min_recall: float, min_precision: float) -> float:
    """AP from ``(score, is_tp)`` pairs pooled over scenes."""
    if n_gt == 0:
        return 0.0
    ranked = sorted(range(len(scored_tp)), key=lambda i: -scored_tp[i][0])
    # best precision reached once at least j true positives are in, for each j
    best_at = [Fraction(0)] * (n_gt + 1)
    tp = 0
    for k, i in enumerate(ranked, start=1):
        tp += bool(scored_tp[i][1])
        prec = Fraction(tp, k)
        if prec > best_at[tp]:
            best_at[tp] = prec
    # envelope: max over recall levels >= j
    env = [Fraction(0)] * (n_gt + 2)
    for j in range(n_gt, 0, -1):
        env[j] = max(best_at[j], env[j + 1])
    r0 = _frac(min_recall)
    p0 = _frac(min_precision)
    area = Fraction(0)
    for j in range(1, n_gt + 1):
        lo, hi = max(Fraction(j - 1, n_gt), r0), Fraction(j, n_gt)
        if hi <= lo:
            continue
        p = env[j] if env[j] >= p0 else Fraction(0)
        area += (hi - lo) * p
    return float(area / (1 - r0))


def average_precision(preds: Sequence[Box3D], gts: Sequence[Box3D], cfg: EvalConfig = EvalConfig()) -> float:
    """Single-scene, single-class AP averaged over the distance thresholds."""
    return class_result(-1, [(preds, gts)], cfg).ap


@dataclass
class ClassResult:
    class_id: int
    ap: float
    recall: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    ap_per_threshold: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__, ap_per_threshold={str(k): v for k, v in self.ap_per_threshold.items()})


def class_result(class_id: int, scenes: Sequence[tuple], cfg: EvalConfig = EvalConfig()) -> ClassResult:
    """``scenes`` is a sequence of (preds, gts) pairs for one class; matching is per scene."""
    n_gt = sum(len(g) for _, g in scenes)
    aps = {}
    last = None
    for dist in cfg.dist_thresholds:
        pooled = []
        for preds, gts in scenes:
            m = match(preds, gts, dist)
            pooled.extend((p.score, t) for p, t in zip(preds, m.tp))
        aps[dist] = ap_from_ranked(pooled, n_gt, cfg.min_recall, cfg.min_precision)
        last = pooled
    tp = sum(t for _, t in last)
    fp = len(last) - tp
    recall = tp / n_gt if n_gt else 0.0
    ap = sum(aps.values()) / len(aps)
    return ClassResult(class_id, ap, recall, tp, fp, n_gt - tp, n_gt, aps)


def pr_curve(class_id: int, scenes: Sequence[tuple], dist: float) -> list[tuple[float, float, float]]:
    """(score, recall, precision) after each ranked prediction."""
    n_gt = sum(len(g) for _, g in scenes)
    pooled = []
    for preds, gts in scenes:
        m = match(preds, gts, dist)
        pooled.extend((p.score, t) for p, t in zip(preds, m.tp))
    pooled.sort(key=lambda x: -x[0])
    out, tp = [], 0
    for k, (s, t) in enumerate(pooled, start=1):
        tp += bool(t)
        out.append((s, tp / n_gt if n_gt else 0.0, tp / k))
    return out


def evaluate(pairs: Sequence[tuple], vocab: Vocabulary, cfg: EvalConfig = EvalConfig()) -> dict:
    """Per-class results for every vocabulary class.

    ``pairs`` is a sequence of (predictions, ground truth) box lists, one per scene.
    """
    out = {}
    for cid in vocab.all_ids:
        per_scene = [([p for p in preds if p.class_id == cid], [g for g in gts if g.class_id == cid])
                     for preds, gts in pairs]
        out[cid] = class_result(cid, per_scene, cfg)
    return out


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def aggregate(results: dict, vocab: Vocabulary) -> dict:
    """mAP over all classes with ground truth; AP_B / AP_N / AR_N over the base / novel subsets.

    A subset with no annotated class yields ``None``; no annotated class at all
    raises :class:`EmptyClassSet`.
    """
    scored = {c: r for c, r in results.items() if r.n_gt > 0 and c in set(vocab.all_ids)}
    if not scored:
        raise EmptyClassSet("no vocabulary class has ground truth to evaluate against")
    base = [scored[c] for c in vocab.base_ids if c in scored]
    novel = [scored[c] for c in vocab.novel_ids if c in scored]
    return {
        "mAP": _mean([r.ap for r in scored.values()]),
        "AP_B": _mean([r.ap for r in base]),
        "AP_N": _mean([r.ap for r in novel]),
        "AR_N": _mean([r.recall for r in novel]),
    }
