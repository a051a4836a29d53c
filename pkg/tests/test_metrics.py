import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layoutbridge.geometry import GridSpec, Layout
from layoutbridge.metrics import (
    LqsReport,
    MetricParams,
    aggregate_reports,
    area_consistency,
    combine_location,
    layout_quality_score,
    location_consistency,
    match_objects,
    multiset_label_scores,
)

PERSON, DOG, CAT = 0, 16, 15


def _lay(*items):
    return Layout.from_tuples(items)


def test_label_scores_multiset():
    gt = _lay((PERSON, 10, 10, 5, 5), (PERSON, 20, 20, 5, 5), (DOG, 30, 30, 5, 5))
    pred = _lay((PERSON, 10, 10, 5, 5), (DOG, 20, 20, 5, 5), (DOG, 30, 30, 5, 5), (CAT, 40, 40, 5, 5))
    lr, lp = multiset_label_scores(gt, pred)
    assert lr == pytest.approx(2 / 3)
    assert lp == pytest.approx(2 / 4)


def test_label_scores_empty_sides():
    full = _lay((PERSON, 10, 10, 5, 5))
    assert multiset_label_scores(Layout(), Layout()) == (1.0, 1.0)
    assert multiset_label_scores(full, Layout()) == (0.0, 1.0)
    assert multiset_label_scores(Layout(), full) == (1.0, 0.0)


def test_matching_prefers_crossed_pairs():
    gt = _lay((PERSON, 10, 10, 5, 5), (PERSON, 200, 200, 5, 5))
    pred = _lay((PERSON, 198, 202, 5, 5), (PERSON, 12, 8, 5, 5))
    m = match_objects(gt, pred)
    assert m.pairs == ((0, 1), (1, 0))
    # oracle: the two permutations
    straight = math.dist((10, 10), (198, 202)) + math.dist((200, 200), (12, 8))
    crossed = math.dist((10, 10), (12, 8)) + math.dist((200, 200), (198, 202))
    assert crossed < straight


def test_matching_is_per_category():
    gt = _lay((PERSON, 10, 10, 5, 5), (DOG, 200, 200, 5, 5))
    pred = _lay((DOG, 12, 12, 5, 5), (PERSON, 198, 198, 5, 5))
    m = match_objects(gt, pred)
    assert m.pairs == ((0, 1), (1, 0))
    assert m.unmatched_gt == () and m.unmatched_pred == ()


def test_location_consistency_example():
    gt = _lay((PERSON, 64, 64, 10, 10), (DOG, 192, 64, 10, 10))
    pred = _lay((PERSON, 64, 96, 10, 10), (DOG, 192, 96, 10, 10))
    alc, rlc, lc = location_consistency(match_objects(gt, pred))
    assert alc == 32.0
    assert rlc == 0.0
    assert math.exp(-0.2) == pytest.approx(0.818731, abs=1e-6)
    assert lc == pytest.approx(0.954683, abs=1e-6)


def test_location_consistency_hand_computed_rlc():
    gt = _lay((PERSON, 0, 0, 4, 4), (DOG, 100, 0, 4, 4))
    pred = _lay((PERSON, 0, 0, 4, 4), (DOG, 130, 40, 4, 4))
    alc, rlc, _ = location_consistency(match_objects(gt, pred))
    assert alc == pytest.approx(50 / 2)
    assert rlc == pytest.approx(50.0)  # both ordered pairs differ by (30, 40)


def test_combine_location_published_row():
    want = 0.25 * math.exp(-57.2088 / 160) + 0.75 * math.exp(-88.5594 / 160)
    assert combine_location(57.2088, 88.5594) == pytest.approx(want, rel=1e-15)
    assert want == pytest.approx(0.6062, abs=5e-4)


def test_area_consistency_order_violation():
    gt = _lay((PERSON, 50, 50, 40, 40), (DOG, 150, 150, 20, 20))
    pred = _lay((PERSON, 50, 50, 20, 20), (DOG, 150, 150, 40, 40))
    aac, rac, ac = area_consistency(match_objects(gt, pred))
    assert rac == 0.0
    assert aac == pytest.approx(1 - (1200 / 65536 + 1200 / 65536) / 2)
    assert ac == pytest.approx(0.25 * aac)


def test_single_pair_conventions():
    r = layout_quality_score(_lay((PERSON, 10, 10, 5, 5)), _lay((PERSON, 20, 10, 5, 6)))
    assert r.rlc == 0.0 and r.rac == 1.0
    assert r.alc == 10.0


def test_no_pairs_conventions():
    r = layout_quality_score(_lay((PERSON, 10, 10, 5, 5)), _lay((DOG, 10, 10, 5, 5)))
    assert (r.alc, r.rlc, r.aac, r.rac) == (None, None, None, None)
    assert r.lc == 0.0 and r.ac == 0.0
    assert r.lqs == 0.0


def test_empty_both_scores_two():
    r = layout_quality_score(Layout(), Layout())
    assert (r.lr, r.lp, r.lc, r.ac, r.lqs) == (1.0, 1.0, 0.0, 0.0, 2.0)


def test_lqs_is_sum_of_parts():
    rng = random.Random(3)
    for _ in range(50):
        gt = _lay(*[(rng.randrange(4), rng.uniform(0, 256), rng.uniform(0, 256), rng.uniform(1, 80), rng.uniform(1, 80)) for _ in range(rng.randrange(6))])
        pred = _lay(*[(rng.randrange(4), rng.uniform(0, 256), rng.uniform(0, 256), rng.uniform(1, 80), rng.uniform(1, 80)) for _ in range(rng.randrange(6))])
        r = layout_quality_score(gt, pred)
        assert r.lqs == r.lr + r.lp + r.lc + r.ac
        assert 0.0 <= r.lqs <= 4.0


boxes = st.tuples(st.integers(0, 5), st.floats(0, 256), st.floats(0, 256), st.floats(1, 256), st.floats(1, 256))


@settings(max_examples=100)
@given(st.lists(boxes, min_size=1, max_size=10))
def test_identity_saturates(items):
    lay = _lay(*items)
    r = layout_quality_score(lay, lay)
    assert r.lqs == 4.0


@settings(max_examples=100)
@given(st.lists(boxes, min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_invariant_to_prediction_order(items, rnd):
    # tied costs may pick a different optimal pairing, so only
    # pairing-independent columns are compared here
    gt = _lay(*items[::2])
    shuffled = list(items)
    rnd.shuffle(shuffled)
    a = layout_quality_score(gt, _lay(*items))
    b = layout_quality_score(gt, _lay(*shuffled))
    assert (a.lr, a.lp) == (b.lr, b.lp)
    assert (a.alc is None) == (b.alc is None)
    if a.alc is not None:
        assert a.alc == pytest.approx(b.alc, rel=1e-12)


def test_invariant_to_prediction_order_without_ties():
    rng = np.random.default_rng(5)
    for _ in range(100):
        def draw(n):
            return [(int(rng.integers(3)), *rng.uniform(0, 256, 2), *rng.uniform(1, 60, 2)) for _ in range(n)]
        gt, pred = _lay(*draw(6)), draw(7)
        a = layout_quality_score(gt, _lay(*pred))
        b = layout_quality_score(gt, _lay(*pred[::-1]))
        for col in ("lr", "lp", "alc", "rlc", "lc", "aac", "rac", "ac", "lqs"):
            va, vb = getattr(a, col), getattr(b, col)
            assert (va is None and vb is None) or va == pytest.approx(vb, abs=1e-12)


def _report(lc, **kw):
    base = dict(lr=1.0, lp=1.0, alc=None, rlc=None, lc=lc, aac=None, rac=None, ac=0.0, lqs=2.0 + lc)
    base.update(kw)
    return LqsReport(**base)


def test_aggregate_example():
    reports = [_report(1.0), _report(0.954683), _report(0.0)]
    agg = aggregate_reports(reports)
    assert agg.lc == pytest.approx((1.0 + 0.954683 + 0.0) / 3, abs=1e-12)
    assert round(agg.lc, 6) == 0.651561


def test_aggregate_skips_undefined_sub_scores():
    agg = aggregate_reports([_report(0.5, alc=10.0), _report(0.0)])
    assert agg.alc == 10.0
    assert agg.rlc is None


def test_aggregate_is_order_insensitive():
    rng = np.random.default_rng(0)
    reports = [_report(float(v), alc=float(v) * 100) for v in rng.uniform(0, 1, 500)]
    a = aggregate_reports(reports)
    b = aggregate_reports(reports[::-1])
    assert a == b


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        aggregate_reports([])


def test_params_validation():
    with pytest.raises(ValueError):
        MetricParams(gamma_lc=1.5)
    with pytest.raises(ValueError):
        MetricParams(smoothing=0)


def test_non_square_gridspec_changes_area_normaliser():
    gt = _lay((PERSON, 50, 50, 40, 40))
    pred = _lay((PERSON, 50, 50, 20, 20))
    aac, _, _ = area_consistency(match_objects(gt, pred), GridSpec(frame=(128, 128)))
    assert aac == pytest.approx(1 - 1200 / 128 ** 2)
