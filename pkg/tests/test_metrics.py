import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_lesionwise, pointset_hd
from tumoreval.errors import GeometryMismatch, NonCanonicalLabels
from tumoreval.fixtures import FixtureSpec, ball, generate, two_lesion_layout
from tumoreval.metrics import LesionKind, LesionwiseParams, dice, evaluate_case, hd95, lesionwise
from tumoreval.volume import ET, NCR, ED, BinaryMask, Dims, LabelVolume, RegionId, compose_region

masks8 = arrays(bool, (6, 7, 5))


def _bm(v, spacing=(1, 1, 1)):
    return BinaryMask(v, spacing)


def test_dice_identity():
    v = np.zeros((4, 4, 4), bool)
    v[1:3, 1:3, 1] = True
    assert dice(_bm(v), _bm(v)) == 100.0


def test_dice_two_three_overlap_two():
    a = np.zeros((5, 1, 1), bool)
    b = np.zeros((5, 1, 1), bool)
    a[0:2] = True
    b[0:3] = True
    assert dice(_bm(a), _bm(b)) == 80.0


def test_dice_empty_conventions():
    e = np.zeros((3, 3, 3), bool)
    f = e.copy()
    f[1, 1, 1] = True
    assert dice(_bm(e), _bm(e)) == 100.0
    assert dice(_bm(e), _bm(f)) == 0.0


def test_geometry_mismatch():
    a = _bm(np.zeros((3, 3, 3), bool))
    with pytest.raises(GeometryMismatch):
        dice(a, _bm(np.zeros((3, 3, 4), bool)))
    with pytest.raises(GeometryMismatch):
        hd95(a, _bm(np.zeros((3, 3, 3), bool), (1, 1, 2)))


def test_hd95_identity_is_zero():
    v = np.random.default_rng(2).random((8, 8, 8)) < 0.3
    assert hd95(_bm(v), _bm(v)) == 0.0


def test_hd95_parallel_slabs():
    a = np.zeros((6, 6, 8), bool)
    b = a.copy()
    a[:, :, 1] = True
    b[:, :, 6] = True
    assert hd95(_bm(a), _bm(b), percentile=100) == 5.0
    assert pointset_hd(a, b, (1, 1, 1), 100) == 5.0


def test_hd95_one_empty_returns_penalty():
    e = np.zeros((4, 4, 4), bool)
    f = e.copy()
    f[2, 2, 2] = True
    assert hd95(_bm(e), _bm(f), penalty=373.13) == 373.13
    assert hd95(_bm(e), _bm(e), penalty=373.13) == 0.0


def test_hd95_default_penalty_is_volume_diagonal():
    e = BinaryMask(np.zeros((240, 240, 155), bool))
    f = np.zeros((240, 240, 155), bool)
    f[10, 10, 10] = True
    assert hd95(e, BinaryMask(f)) == pytest.approx(373.1287, abs=1e-4)


@pytest.mark.parametrize("spacing", [(1, 1, 1), (1, 1, 2)])
@pytest.mark.parametrize("seed", range(5))
def test_hd95_matches_pointset(seed, spacing):
    rng = np.random.default_rng(seed)
    a = rng.random((10, 9, 8)) < 0.15
    b = rng.random((10, 9, 8)) < 0.15
    got = hd95(_bm(a, spacing), _bm(b, spacing))
    assert abs(got - pointset_hd(a, b, spacing)) <= 1e-6
    assert got == hd95(_bm(b, spacing), _bm(a, spacing))


@settings(max_examples=50, deadline=None)
@given(masks8, masks8)
def test_dice_and_hd95_properties(a, b):
    A, B = _bm(a), _bm(b)
    d = dice(A, B)
    assert 0.0 <= d <= 100.0 and d == dice(B, A)
    h = hd95(A, B)
    assert h == hd95(B, A)
    assert h <= np.sqrt(6**2 + 7**2 + 5**2) + 1e-9


@settings(max_examples=25, deadline=None)
@given(masks8, masks8, st.permutations([0, 1, 2]))
def test_axis_permutation_invariance(a, b, perm):
    pa, pb = np.transpose(a, perm), np.transpose(b, perm)
    assert dice(_bm(a), _bm(b)) == dice(_bm(pa), _bm(pb))
    p = LesionwiseParams(fn_fp_hd95_penalty_mm=50.0)
    assert lesionwise(_bm(a), _bm(b), p).dice == pytest.approx(lesionwise(_bm(pa), _bm(pb), p).dice, abs=1e-12)


# lesion-wise


def test_lesionwise_identity():
    v = np.zeros((10, 10, 10), bool)
    v[3:6, 3:6, 3:6] = True
    res = lesionwise(_bm(v), _bm(v))
    assert len(res.records) == 1 and res.records[0].kind is LesionKind.TP
    assert res.dice == 100.0 and res.hd95 == 0.0


def test_lesionwise_empty_gt_with_fp():
    gt = np.zeros((10, 10, 10), bool)
    pred = gt.copy()
    pred[2:4, 2:4, 2:4] = True
    res = lesionwise(_bm(pred), _bm(gt), LesionwiseParams(fn_fp_hd95_penalty_mm=99.0))
    assert res.dice == 0.0 and res.hd95 == 99.0
    assert [r.kind for r in res.records] == [LesionKind.FP]


def test_lesionwise_both_empty():
    e = np.zeros((5, 5, 5), bool)
    records, d, h = lesionwise(_bm(e), _bm(e))
    assert records == () and d == 100.0 and h == 0.0


def test_two_lesions_one_covered():
    gt, pred = two_lesion_layout()
    params = LesionwiseParams(fn_fp_hd95_penalty_mm=100.0)
    res = lesionwise(compose_region(pred, "ET"), compose_region(gt, "ET"), params)
    assert res.dice == 50.0
    assert res.hd95 == 50.0  # (0 + 100) / 2
    assert [r.kind for r in res.records] == [LesionKind.TP, LesionKind.FN]
    ref = brute_lesionwise(pred.voxels == ET, gt.voxels == ET, (1, 1, 1), penalty=100.0)
    assert ref == (50.0, 50.0)


def test_pred_component_bridging_two_zones_serves_both():
    gt = np.zeros((14, 5, 5), bool)
    gt[2, 2, 2] = gt[11, 2, 2] = True
    pred = np.zeros_like(gt)
    pred[2:12, 2, 2] = True
    res = lesionwise(_bm(pred), _bm(gt), LesionwiseParams(fn_fp_hd95_penalty_mm=100.0))
    assert [r.kind for r in res.records] == [LesionKind.TP, LesionKind.TP]
    assert all(r.matched_pred_component_ids == (1,) for r in res.records)


@pytest.mark.parametrize("seed", range(12))
def test_lesionwise_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    shape = (9, 8, 7)
    gt = rng.random(shape) < 0.06
    pred = (gt & (rng.random(shape) < 0.7)) | (rng.random(shape) < 0.04)
    spacing = (1, 1, 2) if seed % 2 else (1, 1, 1)
    for conn in (6, 26):
        p = LesionwiseParams(connectivity=conn, fn_fp_hd95_penalty_mm=42.0)
        got = lesionwise(_bm(pred, spacing), _bm(gt, spacing), p)
        want = brute_lesionwise(pred, gt, spacing, conn=conn, penalty=42.0)
        assert got.dice == pytest.approx(want[0], abs=1e-9)
        assert got.hd95 == pytest.approx(want[1], abs=1e-6)


def test_single_lesion_full_match_reduces_to_plain_metrics():
    rng = np.random.default_rng(8)
    gt = np.zeros((16, 16, 16), bool)
    gt[4:11, 5:12, 4:10] = True
    pred = np.zeros_like(gt)
    pred[5:12, 4:10, 5:11] = True
    pred &= rng.random(gt.shape) < 0.95
    pred[5:12, 4:10, 5] = True  # keep it one component
    res = lesionwise(_bm(pred), _bm(gt))
    assert res.n_gt_lesions == 1 and res.count(LesionKind.FP) == 0
    assert res.dice == pytest.approx(dice(_bm(pred), _bm(gt)), abs=1e-9)
    assert res.hd95 == pytest.approx(hd95(_bm(pred), _bm(gt)), abs=1e-9)


def test_far_false_positive_lowers_lesionwise_dice():
    gt = np.zeros((20, 20, 20), bool)
    gt[2:6, 2:6, 2:6] = True
    pred = gt.copy()
    pred[3, 3, 3] = False
    before = lesionwise(_bm(pred), _bm(gt)).dice
    pred[15:17, 15:17, 15:17] = True
    after = lesionwise(_bm(pred), _bm(gt)).dice
    assert after < before


def test_evaluate_case_identity():
    lab, _ = generate(FixtureSpec(Dims(20, 20, 20), primitives=(ball(ED, (10, 10, 10), 6), ball(ET, (10, 10, 10), 3))))
    cm = evaluate_case(lab, lab, case_id="x")
    for r in RegionId:
        m = cm[r]
        assert (m.legacy_dice, m.legacy_hd95, m.lesionwise_dice, m.lesionwise_hd95) == (100.0, 0.0, 100.0, 0.0)


def test_evaluate_case_lesion_counts():
    spec = FixtureSpec(
        Dims(30, 20, 20),
        primitives=(ball(NCR, (7, 10, 10), 4), ball(ET, (7, 10, 10), 2), ball(ED, (22, 10, 10), 4)),
    )
    lab, _ = generate(spec)
    cm = evaluate_case(lab, lab)
    assert cm["WT"].n_gt_lesions == 2
    assert cm["TC"].n_gt_lesions == 1
    assert cm["ET"].n_gt_lesions == 1


def test_evaluate_case_requires_canonical_labels():
    raw = np.zeros((4, 4, 4), np.uint8)
    raw[1, 1, 1] = 4
    with pytest.raises(NonCanonicalLabels):
        evaluate_case(LabelVolume(raw), LabelVolume(np.zeros((4, 4, 4), np.uint8)))
    with pytest.raises(TypeError):
        evaluate_case(raw, raw)


def test_lesion_record_invariants():
    gt, pred = two_lesion_layout()
    res = lesionwise(compose_region(pred, "WT"), compose_region(gt, "WT"))
    for r in res.records:
        assert 0 <= r.dice_percent <= 100 and r.hd95_mm >= 0
        if r.kind is not LesionKind.TP:
            assert r.dice_percent == 0
