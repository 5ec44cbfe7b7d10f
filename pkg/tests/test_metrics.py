"""Metric tests: worked examples, then loop-written oracles over random sets."""
import csv
import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msfin import metrics as mx
from msfin.errors import ContractError, MetricUndefinedError
from msfin.metrics import VideoPrediction


def video(vid, probs, label, t_ao=None, fps=10):
    return VideoPrediction(vid, np.asarray(probs, dtype=np.float64), label, t_ao, fps)


def single_frame_set(scores, labels):
    """One-frame videos whose decision score is exactly the given number."""
    return [
        video(f"v{i}", [s], lab, t_ao=1 if lab else None)
        for i, (s, lab) in enumerate(zip(scores, labels))
    ]


def oracle_ap(scores, labels):
    """AP via explicit threshold loop, no shared code with the implementation."""
    n_pos = sum(labels)
    ap, r_prev = 0.0, 0.0
    for tau in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= tau and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= tau and y == 0)
        ap += (tp / n_pos - r_prev) * (tp / (tp + fp))
        r_prev = tp / n_pos
    return ap


def random_videos(rng, n, coarse=True, fps=10):
    """Mixed positives/negatives; coarse grid provokes score ties."""
    out = []
    for i in range(n):
        t_len = int(rng.integers(3, 12))
        if coarse:
            probs = rng.integers(0, 21, size=t_len) / 20.0
        else:
            probs = rng.uniform(0.0, 1.0, size=t_len)
        label = int(rng.integers(0, 2)) if i > 1 else i  # force both classes
        t_ao = int(rng.integers(1, t_len + 1)) if label else None
        out.append(video(f"v{i}", probs, label, t_ao, fps))
    return out


# ----------------------------------------------------------- average precision


def test_ap_worked_example_five_sixths():
    videos = single_frame_set([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    assert mx.average_precision(videos) == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_ap_perfect_ranking_is_one():
    videos = single_frame_set([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert mx.average_precision(videos) == pytest.approx(1.0, abs=1e-12)


def test_ap_matches_loop_oracle_with_ties():
    rng = np.random.default_rng(5)
    for trial in range(20):
        videos = random_videos(rng, int(rng.integers(4, 15)))
        scores = [v.score for v in videos]
        labels = [v.label for v in videos]
        assert mx.average_precision(videos) == pytest.approx(
            oracle_ap(scores, labels), abs=1e-9
        )


def test_frame_level_ap_matches_frame_oracle():
    rng = np.random.default_rng(6)
    videos = random_videos(rng, 8)
    scores, labels = [], []
    for v in videos:
        bound = v.t_ao if v.label == 1 else len(v.probs)
        scores.extend(v.probs[:bound].tolist())
        labels.extend([v.label] * bound)
    assert mx.average_precision(videos, granularity="frame") == pytest.approx(
        oracle_ap(scores, labels), abs=1e-9
    )


def test_ap_needs_a_positive():
    with pytest.raises(MetricUndefinedError):
        mx.average_precision(single_frame_set([0.5, 0.4], [0, 0]))


def test_ap_rejects_unknown_granularity():
    with pytest.raises(ContractError):
        mx.average_precision(single_frame_set([0.5], [1]), granularity="clip")


# ------------------------------------------------------------- decision window


def test_frames_after_accident_never_influence_metrics():
    base = np.array([0.1, 0.2, 0.6, 0.1, 0.1])
    spiked = base.copy()
    spiked[3:] = 0.99  # after t_ao=3
    neg = video("n", [0.3, 0.3, 0.3, 0.3, 0.3], 0)
    rep_a = mx.evaluate([video("p", base, 1, t_ao=3), neg])
    rep_b = mx.evaluate([video("p", spiked, 1, t_ao=3), neg])
    assert rep_a.to_json_dict() == rep_b.to_json_dict()


def test_video_score_is_window_max():
    v = video("p", [0.1, 0.7, 0.3, 0.95], 1, t_ao=3)
    assert v.score == pytest.approx(0.7)
    assert video("n", [0.1, 0.7, 0.3, 0.95], 0).score == pytest.approx(0.95)


# ------------------------------------------------------------------------- TTA


def test_tta_worked_example_two_seconds():
    probs = np.zeros(40)
    probs[10] = 0.8  # frame 11 crosses; t_ao=31, fps=10
    v = video("p", probs, 1, t_ao=31, fps=10)
    assert mx.tta(v, 0.5) == pytest.approx(2.0, abs=1e-12)


def test_tta_tie_counts_as_crossing():
    v = video("p", [0.2, 0.5, 0.9], 1, t_ao=3, fps=5)
    assert mx.tta(v, 0.5) == pytest.approx((3 - 2) / 5)


def test_tta_uses_earliest_crossing():
    v = video("p", [0.6, 0.1, 0.7], 1, t_ao=3, fps=1)
    assert mx.tta(v, 0.5) == pytest.approx(2.0)


def test_tta_missed_detection_is_none():
    v = video("p", [0.1, 0.2], 1, t_ao=2)
    assert mx.tta(v, 0.5) is None


def test_tta_zero_when_first_crossing_at_accident():
    v = video("p", [0.1, 0.9], 1, t_ao=2)
    assert mx.tta(v, 0.5) == 0.0


def test_tta_rejects_negative_videos():
    with pytest.raises(ContractError):
        mx.tta(video("n", [0.5], 0), 0.5)


# ------------------------------------------------------------------------ mTTA


def oracle_mtta(videos, taus, policy):
    vals = []
    n_pos = sum(1 for v in videos if v.label == 1)
    for tau in taus:
        ttas = []
        for v in videos:
            if v.label != 1:
                continue
            for t in range(1, v.t_ao + 1):
                if v.probs[t - 1] >= tau:
                    ttas.append((v.t_ao - t) / v.fps)
                    break
        if policy == "zero_undetected":
            vals.append(sum(ttas) / n_pos)
        elif ttas:
            vals.append(sum(ttas) / len(ttas))
        elif policy == "zero":
            vals.append(0.0)
    return sum(vals) / len(vals)


def test_mtta_matches_loop_oracle_all_policies():
    rng = np.random.default_rng(9)
    videos = random_videos(rng, 12)
    for policy in mx.ZERO_DETECTION_POLICIES:
        got = mx.mtta(videos, zero_detection_policy=policy)
        want = oracle_mtta(videos, mx.DEFAULT_THRESHOLDS, policy)
        assert got == pytest.approx(want, abs=1e-12)


def test_mtta_policies_differ_when_high_thresholds_miss():
    # Scores cap at 0.6, so taus above it detect nothing.
    videos = [
        video("p1", [0.2, 0.6], 1, t_ao=2, fps=2),
        video("p2", [0.5, 0.3], 1, t_ao=2, fps=2),
    ]
    taus = [0.4, 0.9]
    skip = mx.mtta(videos, thresholds=taus, zero_detection_policy="skip")
    zero = mx.mtta(videos, thresholds=taus, zero_detection_policy="zero")
    # tau=0.4: p1 first crosses frame 2 (tta 0), p2 frame 1 (tta 0.5).
    assert skip == pytest.approx(0.25)
    assert zero == pytest.approx(0.125)


def test_mtta_undefined_without_positives_or_detections():
    with pytest.raises(MetricUndefinedError):
        mx.mtta([video("n", [0.5], 0)])
    quiet = [video("p", [0.001], 1, t_ao=1), video("n", [0.002], 0)]
    with pytest.raises(MetricUndefinedError):
        mx.mtta(quiet)  # grid starts at 0.01; nothing ever crosses
    assert mx.mtta(quiet, zero_detection_policy="zero") == 0.0
    assert mx.mtta(quiet, zero_detection_policy="zero_undetected") == 0.0


def test_mtta_zero_undetected_is_recall_weighted():
    # tau=0.5: p1 crosses frame 1 (tta 2.0), p2 missed -> (2.0 + 0) / 2.
    videos = [
        video("p1", [0.9, 0.1, 0.1], 1, t_ao=3, fps=1),
        video("p2", [0.0, 0.0, 0.0], 1, t_ao=3, fps=1),
    ]
    got = mx.mtta(videos, thresholds=[0.5], zero_detection_policy="zero_undetected")
    assert got == pytest.approx(1.0, abs=1e-12)


def test_mtta_extra_detection_helps_zero_undetected_but_not_skip():
    # Detecting a second positive (later, tta 1.0) drags the detected-only
    # mean down but raises the coverage-honest one: silence never pays.
    base = [
        video("p1", [0.9, 0.1, 0.1], 1, t_ao=3, fps=1),
        video("p2", [0.0, 0.0, 0.0], 1, t_ao=3, fps=1),
    ]
    wider = [
        video("p1", [0.9, 0.1, 0.1], 1, t_ao=3, fps=1),
        video("p2", [0.0, 0.8, 0.0], 1, t_ao=3, fps=1),
    ]
    taus = [0.5]
    assert mx.mtta(wider, thresholds=taus) < mx.mtta(base, thresholds=taus)
    zu = dict(zero_detection_policy="zero_undetected")
    assert mx.mtta(wider, thresholds=taus, **zu) > mx.mtta(base, thresholds=taus, **zu)


def test_mtta_zero_undetected_never_exceeds_other_policies():
    rng = np.random.default_rng(23)
    for trial in range(5):
        videos = random_videos(rng, 10)
        zu = mx.mtta(videos, zero_detection_policy="zero_undetected")
        assert zu <= mx.mtta(videos, zero_detection_policy="zero") + 1e-12
        assert zu <= mx.mtta(videos, zero_detection_policy="skip") + 1e-12


def test_mtta_rejects_bad_policy_and_empty_grid():
    videos = [video("p", [0.5], 1, t_ao=1)]
    with pytest.raises(ContractError):
        mx.mtta(videos, zero_detection_policy="drop")
    with pytest.raises(ContractError):
        mx.mtta(videos, thresholds=[])


# ----------------------------------------------------------- recall-anchored op


def test_at_recall_picks_largest_qualifying_threshold():
    # Positives score .9 .7 .5 .3; negatives .8 .2.  Recall>=0.75 needs 3 TPs,
    # first reached at tau=0.5 (3 TP, 1 FP).
    videos = single_frame_set([0.9, 0.7, 0.5, 0.3, 0.8, 0.2], [1, 1, 1, 1, 0, 0])
    point = mx.at_recall(videos, target_recall=0.75)
    assert point.threshold == pytest.approx(0.5)
    assert point.recall == pytest.approx(0.75)
    assert point.precision == pytest.approx(3.0 / 4.0)
    assert point.met_target


def test_at_recall_default_grid_always_meets_target():
    rng = np.random.default_rng(13)
    for _ in range(10):
        videos = random_videos(rng, 10)
        point = mx.at_recall(videos, target_recall=0.8)
        assert point.met_target and point.recall >= 0.8


def test_at_recall_reports_mean_tta_at_threshold():
    videos = [
        video("p1", [0.2, 0.9], 1, t_ao=2, fps=2),  # tta at .5: 0.0
        video("p2", [0.8, 0.1], 1, t_ao=2, fps=2),  # tta at .5: 0.5
    ]
    point = mx.at_recall(videos, target_recall=1.0, thresholds=[0.5])
    assert point.mean_tta_seconds == pytest.approx(0.25)


def test_at_recall_flags_unreachable_target():
    videos = single_frame_set([0.4, 0.6], [1, 0])
    point = mx.at_recall(videos, target_recall=0.8, thresholds=[0.9, 0.95])
    assert not point.met_target
    assert point.recall == 0.0
    assert point.threshold == pytest.approx(0.95)  # recall tie -> keep larger tau
    assert point.mean_tta_seconds is None
    assert point.precision == 1.0  # no alarms raised at all


def test_at_recall_validation():
    videos = single_frame_set([0.5], [1])
    with pytest.raises(ContractError):
        mx.at_recall(videos, target_recall=0.0)
    with pytest.raises(MetricUndefinedError):
        mx.at_recall(single_frame_set([0.5], [0]))


# ----------------------------------------------------------------------- curve


def test_curve_has_default_grid_rows_and_conventions():
    videos = [
        video("p", [0.1, 0.6], 1, t_ao=2, fps=2),
        video("n", [0.3, 0.2], 0, fps=2),
    ]
    rows = mx.mtta_ap_curve(videos)
    assert len(rows) == 99
    assert [r.threshold for r in rows] == [pytest.approx(i / 100) for i in range(1, 100)]
    top = rows[-1]  # tau=0.99 predicts nobody
    assert top.precision == 1.0 and top.recall == 0.0 and top.mean_tta_seconds is None
    mid = next(r for r in rows if r.threshold == pytest.approx(0.5))
    assert mid.precision == 1.0 and mid.recall == 1.0
    assert mid.mean_tta_seconds == pytest.approx(0.0)


def test_curve_rows_match_threshold_stats():
    rng = np.random.default_rng(21)
    videos = random_videos(rng, 9)
    rows = mx.mtta_ap_curve(videos, thresholds=[0.25, 0.5, 0.75])
    for row in rows:
        tp = sum(1 for v in videos if v.label == 1 and v.score >= row.threshold)
        fp = sum(1 for v in videos if v.label == 0 and v.score >= row.threshold)
        n_pos = sum(1 for v in videos if v.label == 1)
        assert row.recall == pytest.approx(tp / n_pos)
        want_p = tp / (tp + fp) if tp + fp else 1.0
        assert row.precision == pytest.approx(want_p)


# ------------------------------------------------------------------ evaluation


def make_report(seed=33, n=14):
    rng = np.random.default_rng(seed)
    return mx.evaluate(random_videos(rng, n)), None


def test_evaluate_report_matches_components():
    rng = np.random.default_rng(33)
    videos = random_videos(rng, 14)
    rep = mx.evaluate(videos)
    assert rep.ap == pytest.approx(mx.average_precision(videos))
    assert rep.mtta_seconds == pytest.approx(mx.mtta(videos))
    assert rep.num_videos == 14
    assert rep.num_positives == sum(v.label for v in videos)
    assert rep.operating_point == mx.at_recall(videos, 0.8)
    assert len(rep.curve) == 99


def test_evaluate_json_validates_against_schema():
    rep, _ = make_report()
    payload = json.loads(rep.to_json())
    jsonschema.validate(payload, mx.EVAL_REPORT_SCHEMA)


def test_evaluate_is_order_invariant():
    rng = np.random.default_rng(40)
    videos = random_videos(rng, 10)
    rep_a = mx.evaluate(videos)
    rep_b = mx.evaluate(list(reversed(videos)))
    assert rep_a.to_json_dict() == rep_b.to_json_dict()


def test_curve_csv_round_trip(tmp_path):
    rep, _ = make_report()
    path = tmp_path / "curve.csv"
    rep.write_curve_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "precision", "recall", "mean_tta_seconds"]
    assert len(rows) == 1 + 99
    for raw in rows[1:]:
        assert float(raw[1]) >= 0.0  # precision parses
        float(raw[3])  # tta parses (possibly nan)


def test_evaluate_mtta_none_when_nothing_detected():
    videos = [video("p", [0.001], 1, t_ao=1), video("n", [0.002], 0)]
    rep = mx.evaluate(videos)
    assert rep.mtta_seconds is None
    payload = rep.to_json_dict()
    jsonschema.validate(payload, mx.EVAL_REPORT_SCHEMA)


def test_evaluate_empty_set_undefined():
    with pytest.raises(MetricUndefinedError):
        mx.evaluate([])


# ------------------------------------------------------------------ validation


@pytest.mark.parametrize(
    "kwargs",
    [
        {"probs": [], "label": 0},
        {"probs": [[0.5]], "label": 0},
        {"probs": [1.5], "label": 0},
        {"probs": [-0.1], "label": 0},
        {"probs": [np.nan], "label": 0},
        {"probs": [0.5], "label": 2},
        {"probs": [0.5], "label": 1},
        {"probs": [0.5], "label": 1, "t_ao": 0},
        {"probs": [0.5], "label": 1, "t_ao": 2},
        {"probs": [0.5], "label": 0, "t_ao": 1},
        {"probs": [0.5], "label": 1, "t_ao": 1, "fps": 0},
    ],
)
def test_video_prediction_validation(kwargs):
    with pytest.raises(ContractError):
        VideoPrediction("v", np.asarray(kwargs.pop("probs"), dtype=np.float64), **kwargs)


@settings(deadline=None, max_examples=30)
@given(st.data())
def test_ap_property_matches_oracle(data):
    n = data.draw(st.integers(min_value=2, max_value=10))
    scores = data.draw(
        st.lists(
            st.sampled_from([i / 10 for i in range(11)]), min_size=n, max_size=n
        )
    )
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if sum(labels) == 0:
        labels[0] = 1
    videos = single_frame_set(scores, labels)
    assert mx.average_precision(videos) == pytest.approx(
        oracle_ap(scores, labels), abs=1e-9
    )
