import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detpost.evaluation import (
    COCO_THRESHOLDS,
    GroundTruth,
    PRCurve,
    average_precision,
    count_outcomes,
    evaluate,
    match_detections,
    parse_thresholds,
    pr_curve,
    pr_curve_csv,
    precision_recall,
)
from detpost.geometry import Box
from detpost.nms import Detection
from detpost.scenes import SceneSpec, generate_scenes

import oracles


def d(image_id, box, score, cls=0):
    return (image_id, Detection(Box(*box), cls, score))


def gt(image_id, box, cls=0):
    return GroundTruth(image_id, Box(*box), cls)


def as_tuples(dets, gts):
    return ([(i, x.class_id, x.box.as_tuple(), x.score) for i, x in dets],
            [(g.image_id, g.class_id, g.box.as_tuple()) for g in gts])


@pytest.mark.parametrize("counts, expected", [
    ((10, 0, 0), (1.0, 1.0)),
    ((0, 5, 5), (0.0, 0.0)),
    ((3, 1, 2), (0.75, 0.6)),
    ((0, 0, 0), (0.0, 0.0)),
])
def test_precision_recall(counts, expected):
    assert precision_recall(*counts) == expected


def test_match_single_exact():
    assert match_detections([d("a", (0, 0, 2, 2), 0.9)], [gt("a", (0, 0, 2, 2))]) == [(0, True)]


def test_match_without_gt_is_fp():
    assert match_detections([d("a", (0, 0, 2, 2), 0.9)], []) == [(0, False)]


def test_match_greedy_claim_order():
    dets = [d("a", (0, 0, 10, 10.5), 0.8), d("a", (0, 0, 10, 10), 0.9)]
    assert match_detections(dets, [gt("a", (0, 0, 10, 10))], 0.5) == [(0, False), (1, True)]


def test_match_respects_class_and_image():
    g = [gt("a", (0, 0, 10, 10), cls=0)]
    dets = [d("a", (0, 0, 10, 10), 0.9, cls=1), d("b", (0, 0, 10, 10), 0.8)]
    assert match_detections(dets, g) == [(0, False), (1, False)]


def test_match_prefers_highest_iou_unclaimed():
    g = [gt("a", (0, 0, 10, 10)), gt("a", (2, 0, 12, 10))]
    dets = [d("a", (2, 0, 12, 10), 0.9), d("a", (1, 0, 11, 10), 0.8)]
    flags = match_detections(dets, g, 0.5)
    assert flags == [(0, True), (1, True)]
    assert count_outcomes(flags, 2) == (2, 0, 0)


def test_match_threshold_validation():
    with pytest.raises(ValueError):
        match_detections([], [], 0.0)


def test_ap_perfect_detector():
    assert average_precision(pr_curve([True, True, True], 3)) == 1.0


def test_ap_no_true_positives():
    assert average_precision(pr_curve([False, False], 4)) == 0.0
    assert average_precision(PRCurve([], 0, 0.5)) == 0.0


def test_ap_tp_then_fp():
    # envelope precision is 1 all the way to recall 1
    curve = pr_curve([True, False], 1)
    assert curve.points == [(1.0, 1.0), (1.0, 0.5)]
    assert average_precision(curve) == 1.0
    assert average_precision(curve, "trapezoid") == 1.0


def test_ap_hand_value_partial_recall():
    # TP, FP, TP with 4 gts: recall .25/.25/.5, precision 1/.5/.667
    curve = pr_curve([True, False, True], 4)
    env = {r: p for r, p in [(0.25, 1.0), (0.5, 2 / 3)]}
    expected_101 = (26 * env[0.25] + 25 * env[0.5]) / 101
    assert average_precision(curve) == pytest.approx(expected_101)
    assert average_precision(curve, "trapezoid") == pytest.approx(0.25 + 0.25 * 2 / 3)


def test_ap_unknown_method():
    with pytest.raises(ValueError):
        average_precision(pr_curve([True], 1), "voc07")


def test_evaluate_perfect():
    gts = [gt("a", (0, 0, 5, 5)), gt("a", (10, 10, 20, 20), cls=1), gt("b", (3, 3, 9, 9))]
    dets = [(g.image_id, Detection(g.box, g.class_id, 1.0)) for g in gts]
    rep = evaluate(dets, gts)
    assert rep.map50 == 1.0 and rep.map50_95 == 1.0
    assert all(m.precision == 1.0 and m.recall == 1.0 for m in rep.per_class.values())


def test_evaluate_empty_detections():
    rep = evaluate([], [gt("a", (0, 0, 5, 5)), gt("a", (0, 0, 5, 5), cls=3)])
    assert rep.map50 == 0.0 and rep.map50_95 == 0.0
    assert set(rep.per_class) == {0, 3}


def test_evaluate_requires_ground_truth():
    with pytest.raises(ValueError):
        evaluate([d("a", (0, 0, 1, 1), 0.5)], [])
    with pytest.raises(ValueError):
        evaluate([], [gt("a", (0, 0, 1, 1))], [])
    with pytest.raises(ValueError):
        evaluate([], [gt("a", (0, 0, 1, 1))], [1.5])


def test_undetected_class_counts_in_mean():
    gts = [gt("a", (0, 0, 5, 5)), gt("a", (10, 10, 20, 20), cls=1)]
    rep = evaluate([d("a", (0, 0, 5, 5), 0.9)], gts, [0.5])
    assert rep.per_class[1].ap50 == 0.0
    assert rep.map50 == pytest.approx(0.5)


def test_detections_on_unknown_image_are_fp():
    gts = [gt("a", (0, 0, 5, 5))]
    dets = [d("zzz", (0, 0, 5, 5), 0.95), d("a", (0, 0, 5, 5), 0.9)]
    rep = evaluate(dets, gts, [0.5])
    assert rep.per_class[0].ap50 == pytest.approx(average_precision(pr_curve([False, True], 1)))


def test_nonstandard_thresholds():
    gts = [gt("a", (0, 0, 10, 10))]
    dets = [d("a", (0, 0, 10, 8), 0.9)]  # IoU 0.8
    rep = evaluate(dets, gts, [0.75, 0.85])
    assert rep.per_class[0].ap_by_threshold == {0.75: 1.0, 0.85: 0.0}
    assert rep.map50 == 1.0  # primary is the first threshold when 0.5 is absent
    assert rep.map50_95 == 0.5


def _fixture(seed, n_classes=2):
    spec = SceneSpec(n_images=5, boxes_per_image=(1, 4), overlap_level=0.5, class_count=n_classes,
                     center_sigma=4.0, size_sigma=4.0, dets_per_gt=2, spurious_per_image=1,
                     score_noise=0.05, seed=seed)
    gts, dets = generate_scenes(spec)
    return gts, [(r.image_id, r.detection) for r in dets]


@pytest.mark.parametrize("seed", range(10))
def test_matches_exhaustive_cutoff_oracle(seed):
    gts, dets = _fixture(seed)
    dt, gtt = as_tuples(dets, gts)
    for thr in (0.5, 0.75):
        rep = evaluate(dets, gts, [thr])
        for c, m in rep.per_class.items():
            exact = oracles.exhaustive_ap(dt, gtt, c, thr)
            assert m.ap50 == pytest.approx(exact, abs=0.01)
            assert average_precision(rep.curves[(c, thr)], "trapezoid") == pytest.approx(exact, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_counts_match_reference_and_equations(seed):
    gts, dets = _fixture(seed)
    dt, gtt = as_tuples(dets, gts)
    ref = oracles.match_counts(dt, gtt, 0.5)
    flags = match_detections(dets, gts, 0.5)
    for c, (tp, fp, fn) in ref.items():
        mine = [(i, f) for i, f in flags if dets[i][1].class_id == c]
        n_gt = sum(1 for g in gts if g.class_id == c)
        assert count_outcomes(mine, n_gt) == (tp, fp, fn)


def test_report_operating_point_consistent_with_counts():
    gts, dets = _fixture(3)
    dt, gtt = as_tuples(dets, gts)
    rep = evaluate(dets, gts)
    for c, m in rep.per_class.items():
        curve = rep.curves[(c, 0.5)]
        f1 = [2 * p * r / (p + r) if p + r else 0 for r, p in curve.points]
        k = int(np.argmax(f1))
        cut = sorted({x[3] for x in dt if x[1] == c}, reverse=True)[k]
        kept = [x for x in dt if x[1] == c and x[3] >= cut]
        tp = sum(oracles._greedy_match(kept, [g for g in gtt if g[1] == c], 0.5))
        assert (m.precision, m.recall) == precision_recall(tp, len(kept) - tp, m.n_gt - tp)


def test_tied_scores_form_one_cutoff():
    curve = pr_curve([False, True, True, False], 2, scores=[0.9, 0.5, 0.5, 0.1])
    assert curve.points == [(0.0, 0.0), (1.0, 2 / 3), (1.0, 0.5)]
    # the order of tied detections no longer matters
    swapped = pr_curve([True, False, True, False], 2, scores=[0.9, 0.5, 0.5, 0.1])
    assert average_precision(swapped) == average_precision(
        pr_curve([True, True, False, False], 2, scores=[0.9, 0.5, 0.5, 0.1]))


def test_evaluate_tied_scores_match_oracle():
    gt = [GroundTruth("a", Box(0, 0, 10, 10), 0), GroundTruth("a", Box(20, 0, 30, 10), 0)]
    dets = [d("a", (50, 50, 60, 60), 0.5), d("a", (0, 0, 10, 10), 0.5), d("a", (20, 0, 30, 10), 0.4)]
    dt, gtt = as_tuples(dets, gt)
    rep = evaluate(dets, gt, [0.5], method="trapezoid")
    assert rep.per_class[0].ap50 == pytest.approx(oracles.exhaustive_ap(dt, gtt, 0, 0.5), abs=1e-12)
    rev = evaluate(dets[1::-1] + dets[2:], gt, [0.5])
    assert rev.per_class[0].ap50 == evaluate(dets, gt, [0.5]).per_class[0].ap50


def test_pr_curve_scores_length_checked():
    with pytest.raises(ValueError):
        pr_curve([True, False], 1, scores=[0.5])


def test_map_is_mean_of_class_aps():
    gts, dets = _fixture(4, n_classes=3)
    rep = evaluate(dets, gts)
    assert rep.map50 == pytest.approx(np.mean([m.ap50 for m in rep.per_class.values()]))
    assert rep.map50_95 == pytest.approx(np.mean([m.ap50_95 for m in rep.per_class.values()]))
    for m in rep.per_class.values():
        assert m.ap50_95 == pytest.approx(np.mean(list(m.ap_by_threshold.values())))
        assert 0.0 <= m.ap50 <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_ap_invariant_to_monotone_rescaling(seed):
    gts, dets = _fixture(seed)
    squashed = [(i, Detection(x.box, x.class_id, x.score ** 3)) for i, x in dets]
    a, b = evaluate(dets, gts), evaluate(squashed, gts)
    assert a.map50 == b.map50 and a.map50_95 == b.map50_95


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_ap_decreases_with_threshold(seed):
    gts, dets = _fixture(seed)
    rep = evaluate(dets, gts)
    for m in rep.per_class.values():
        aps = [m.ap_by_threshold[t] for t in COCO_THRESHOLDS]
        assert all(x >= y for x, y in zip(aps, aps[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_duplicate_tp_never_increases_ap(seed):
    gts, dets = _fixture(seed)
    base = evaluate(dets, gts, [0.5])
    flags = match_detections(dets, gts, 0.5)
    tps = [i for i, f in flags if f]
    if not tps:
        return
    image_id, x = dets[tps[0]]
    dup = (image_id, Detection(x.box, x.class_id, x.score * 0.999))
    after = evaluate(dets + [dup], gts, [0.5])
    assert after.per_class[x.class_id].ap50 <= base.per_class[x.class_id].ap50


def test_serialization():
    gts, dets = _fixture(1)
    rep = evaluate(dets, gts)
    doc = json.loads(rep.to_json())
    assert doc["map50"] == rep.map50
    assert set(doc["per_class"]) == {str(c) for c in rep.per_class}
    table = rep.format_table({0: "gun"})
    assert table.splitlines()[0].split() == ["Class", "Precision", "Recall", "AP", "AP", "50-95"]
    assert "gun" in table and table.splitlines()[-1].startswith("all")
    csv_text = pr_curve_csv(rep.curves[(0, 0.5)])
    assert csv_text.startswith("recall,precision\n")


def test_parse_thresholds():
    assert parse_thresholds("coco") == COCO_THRESHOLDS
    assert len(COCO_THRESHOLDS) == 10 and COCO_THRESHOLDS[-1] == 0.95
    assert parse_thresholds("0.5, 0.75") == (0.5, 0.75)
    with pytest.raises(ValueError):
        parse_thresholds(" , ")
