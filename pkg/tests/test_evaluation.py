import itertools
import math
from fractions import Fraction

import pytest

from frustum_forge.config import EvalConfig
from frustum_forge.errors import EmptyClassSet
from frustum_forge.evaluation import (ClassResult, aggregate, ap_from_ranked, average_precision, evaluate,
                                      match)
from frustum_forge.geometry import Box3D
from frustum_forge.ingest import Vocabulary


def at(x, y=0.0, score=1.0, cid=0):
    return Box3D(x, y, 0, 1, 1, 1, 0, cid, score)


def test_match_identity_and_empty():
    gts = [at(0), at(5), at(10)]
    m = match(gts, gts, 0.5)
    assert m.n_tp == 3 and m.n_fp == 0 and m.n_fn == 0
    assert match([], gts, 1.0).n_fn == 3


def test_match_greedy_hand_case():
    gts = [at(0), at(1.5)]
    preds = [at(0.8, score=0.9), at(0.1, score=0.5), at(3.0, score=0.4)]
    m = match(preds, gts, 1.0)
    # highest score takes nearest GT (1.5 at 0.7 m), then 0.1 takes GT 0
    assert sorted(m.pairs) == [(0, 1), (1, 0)]
    assert m.tp == [True, True, False]
    # exhaustive check: no assignment in score order does better
    best = 0
    for perm in itertools.permutations(range(3), 2):
        best = max(best, sum(abs(preds[i].cx - gts[j].cx) <= 1.0 for j, i in enumerate(perm)))
    assert m.n_tp == best


def test_duplicates_are_false_positives():
    gts = [at(0)]
    m = match([at(0, score=0.9), at(0.1, score=0.8)], gts, 1.0)
    assert m.tp == [True, False]


def test_ap_perfect_and_empty():
    gts = [at(i * 10) for i in range(5)]
    assert average_precision(gts, gts) == 1.0
    assert average_precision([], gts) == 0.0
    assert average_precision(gts, []) == 0.0


def test_ap_hand_table():
    cfg = EvalConfig(dist_thresholds=(1.0,))
    gts = [at(0), at(10), at(20), at(30)]
    preds = [at(0.2, score=0.9), at(50, score=0.8), at(10.3, score=0.7), at(60, score=0.6), at(19.6, score=0.5)]
    want = ((Fraction(1, 4) - Fraction(1, 10)) + Fraction(1, 4) * Fraction(2, 3) + Fraction(1, 4) * Fraction(3, 5)) / Fraction(9, 10)
    assert average_precision(preds, gts, cfg) == float(want)


def test_ap_precision_floor():
    # precision 1/20 on the only TP: under the 0.1 floor -> 0
    pairs = [(0.9 - i * 0.01, False) for i in range(19)] + [(0.1, True)]
    assert ap_from_ranked(pairs, 1, 0.1, 0.1) == 0.0
    assert ap_from_ranked(pairs, 1, 0.1, 0.0) == pytest.approx(1 / 20)


def test_ap_monotone_under_tp_addition():
    cfg = EvalConfig(dist_thresholds=(1.0,))
    gts = [at(0), at(10), at(20)]
    preds = [at(0, score=0.9), at(50, score=0.8)]
    a = average_precision(preds, gts, cfg)
    b = average_precision(preds + [at(10, score=0.7)], gts, cfg)
    assert b >= a


def test_ap_mean_over_thresholds():
    gts = [at(0)]
    preds = [at(0.7)]
    # TP at 1, 2, 4 m; FP at 0.5 m
    assert average_precision(preds, gts) == pytest.approx(0.75)


def test_evaluate_and_aggregate():
    vocab = Vocabulary(((0, "car"),), ((1, "bike"), (2, "cone")))
    gts = [at(0, cid=0), at(10, cid=1), at(20, cid=2)]
    preds = [at(0, cid=0), at(10, cid=1)]
    res = evaluate([(preds, gts)], vocab)
    agg = aggregate(res, vocab)
    assert agg == {"mAP": pytest.approx(2 / 3), "AP_B": 1.0, "AP_N": 0.5, "AR_N": 0.5}
    assert agg["mAP"] == pytest.approx(sum(r.ap for r in res.values()) / 3, abs=1e-12)


def test_aggregate_hand_means():
    vocab = Vocabulary(((0, "a"), (1, "b")), ((2, "c"),))
    res = {c: ClassResult(c, ap, rec, 0, 0, 0, 1) for c, ap, rec in ((0, 0.2, 0.5), (1, 0.4, 0.5), (2, 0.9, 0.75))}
    agg = aggregate(res, vocab)
    assert agg["AP_B"] == pytest.approx(0.3) and agg["AP_N"] == 0.9 and agg["AR_N"] == 0.75
    assert agg["mAP"] == pytest.approx(0.5)


def test_single_class_vocab():
    vocab = Vocabulary((), ((3, "x"),))
    res = evaluate([([at(0, cid=3)], [at(0, cid=3)])], vocab)
    assert aggregate(res, vocab)["mAP"] == 1.0


def test_empty_class_set():
    vocab = Vocabulary(((0, "a"),), ())
    with pytest.raises(EmptyClassSet):
        aggregate(evaluate([([], [])], vocab), vocab)


def test_multi_scene_matching_is_per_scene():
    vocab = Vocabulary(((0, "a"),), ())
    res = evaluate([([at(0)], [at(0)]), ([], [at(0)])], vocab)
    assert res[0].recall == 0.5 and res[0].tp == 1 and res[0].fn == 1
