"""Confusion-matrix IoU against brute-force set arithmetic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfseg.core import DEFAULT_NOMENCLATURE, N_CLASSES
from lfseg.metrics import ConfusionMatrix, accumulate, iou_report

SCORED = DEFAULT_NOMENCLATURE.scored_indices


def brute_force_iou(pred, truth, n_classes):
    """Per-class IoU from explicit pixel index sets; None when undefined."""
    out = []
    for c in range(n_classes):
        p = set(np.flatnonzero(pred.ravel() == c).tolist())
        t = set(np.flatnonzero(truth.ravel() == c).tolist())
        union = p | t
        out.append(len(p & t) / len(union) if union else None)
    return out


def test_worked_2x2_example():
    pred = np.array([[0, 1], [1, 2]])
    truth = np.array([[0, 1], [2, 2]])
    rep = iou_report(ConfusionMatrix().accumulate(pred, truth))
    assert rep.per_label[0] == pytest.approx(1.0)
    assert rep.per_label[1] == pytest.approx(0.5)
    assert rep.per_label[2] == pytest.approx(0.5)
    assert all(v is None for v in rep.per_label[3:])
    assert rep.miou == pytest.approx((1.0 + 0.5 + 0.5) / 3)


def test_matches_brute_force_on_random_masks(rng):
    for _ in range(50):
        pred = rng.integers(0, N_CLASSES, size=(8, 8))
        truth = rng.integers(0, N_CLASSES, size=(8, 8))
        rep = iou_report(ConfusionMatrix().accumulate(pred, truth))
        want = brute_force_iou(pred, truth, N_CLASSES)
        for slot, c in enumerate(SCORED):
            if want[c] is None:
                assert rep.per_label[slot] is None
            else:
                assert rep.per_label[slot] == pytest.approx(want[c], abs=1e-12)


def test_miou_excludes_other_class():
    # Perfect agreement on 'other' must not lift the mean; the score comes
    # from the scored classes alone.
    pred = np.array([[12, 12], [0, 1]])
    truth = np.array([[12, 12], [0, 0]])
    rep = iou_report(ConfusionMatrix().accumulate(pred, truth))
    assert "other" not in rep.class_names
    # class 0: inter 1, union 2; class 1: inter 0, union 1
    assert rep.miou == pytest.approx((0.5 + 0.0) / 2)


def test_absent_classes_are_excluded_not_zero():
    pred = np.zeros((4, 4), dtype=np.int64)
    truth = np.zeros((4, 4), dtype=np.int64)
    rep = iou_report(ConfusionMatrix().accumulate(pred, truth))
    assert rep.per_label[0] == pytest.approx(1.0)
    assert rep.miou == pytest.approx(1.0)
    assert len(rep.undefined) == len(SCORED) - 1


def test_all_other_raises():
    pred = np.full((4, 4), 12)
    truth = np.full((4, 4), 12)
    cm = ConfusionMatrix().accumulate(pred, truth)
    with pytest.raises(ValueError, match="no scored class"):
        iou_report(cm)


def test_accumulate_is_additive(rng):
    a_p, a_t = rng.integers(0, 13, (6, 6)), rng.integers(0, 13, (6, 6))
    b_p, b_t = rng.integers(0, 13, (6, 6)), rng.integers(0, 13, (6, 6))
    one = ConfusionMatrix().accumulate(a_p, a_t).accumulate(b_p, b_t)
    split_a = ConfusionMatrix().accumulate(a_p, a_t)
    split_b = ConfusionMatrix().accumulate(b_p, b_t)
    merged = split_a.copy().merge(split_b)
    np.testing.assert_array_equal(one.counts, merged.counts)
    assert one.total == 72
    # merge must not mutate its argument
    assert split_b.total == 36


def test_batched_and_flat_inputs_agree(rng):
    pred = rng.integers(0, 13, size=(3, 5, 5))
    truth = rng.integers(0, 13, size=(3, 5, 5))
    batched = ConfusionMatrix().accumulate(pred, truth)
    flat = ConfusionMatrix()
    for p, t in zip(pred, truth):
        flat.accumulate(p, t)
    np.testing.assert_array_equal(batched.counts, flat.counts)


def test_invalid_inputs_raise():
    cm = ConfusionMatrix()
    with pytest.raises(ValueError):
        cm.accumulate(np.zeros((2, 2), dtype=np.int64),
                      np.zeros((2, 3), dtype=np.int64))
    with pytest.raises(ValueError):
        cm.accumulate(np.full((2, 2), 13), np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        cm.accumulate(np.full((2, 2), -1), np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        ConfusionMatrix(counts=np.zeros((3, 4), dtype=np.int64), n_classes=3)


def test_row_normalized_rows_sum_to_one_or_zero(rng):
    cm = ConfusionMatrix().accumulate(rng.integers(0, 3, (8, 8)),
                                      rng.integers(0, 3, (8, 8)))
    rows = cm.row_normalized()
    sums = rows.sum(axis=1)
    assert np.all((np.abs(sums - 1.0) < 1e-9) | (sums == 0.0))


def test_report_serialization(rng):
    rep = iou_report(ConfusionMatrix().accumulate(
        rng.integers(0, 13, (8, 8)), rng.integers(0, 13, (8, 8))))
    d = rep.to_dict()
    assert d["miou"] == pytest.approx(rep.miou)
    assert set(d["per_label"]) == set(rep.class_names)
    assert dict(rep.defined_items()) == {
        n: v for n, v in d["per_label"].items() if v is not None
    }


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_iou_bounds_property(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, N_CLASSES, size=(8, 8))
    truth = rng.integers(0, N_CLASSES, size=(8, 8))
    rep = iou_report(ConfusionMatrix().accumulate(pred, truth))
    assert 0.0 <= rep.miou <= 1.0
    for v in rep.per_label:
        assert v is None or 0.0 <= v <= 1.0


def test_module_level_accumulate_alias(rng):
    cm = ConfusionMatrix()
    out = accumulate(cm, rng.integers(0, 13, (4, 4)), rng.integers(0, 13, (4, 4)))
    assert out is cm
    assert cm.total == 16
