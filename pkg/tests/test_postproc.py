import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tumoreval.errors import EmptyEnsemble, GeometryMismatch
from tumoreval.fixtures import FixtureSpec, ball, generate, hollow_et_case, random_spec
from tumoreval.metrics import dice, lesionwise
from tumoreval.postproc import (
    PipelineStages,
    PostprocRules,
    center_fill,
    ensemble_mean,
    majority_vote,
    remove_small_regions,
    run_pipeline,
    threshold_compose,
)
from tumoreval.volume import BACKGROUND, ED, ET, NCR, Dims, LabelVolume, ProbVolume, RegionId, compose_region


def _probs(wt, tc, et, shape=(1, 1, 1)):
    return ProbVolume([np.full(shape, v, np.float32) for v in (wt, tc, et)])


def _const_probs(shape, wt=0.0, tc=0.0, et=0.0):
    return _probs(wt, tc, et, shape)


def test_default_rules():
    r = PostprocRules()
    assert r.thresholds == {"WT": 0.5, "TC": 0.6, "ET": 0.6}
    assert r.min_volume_mm3 == {"NCR": 75.0, "ET": 75.0, "ED": 500.0}
    assert r.confidence_ceiling == 0.9 and r.center_fill


@pytest.mark.parametrize(
    "p, expected",
    [((0, 0, 0), BACKGROUND), ((0.9, 0.7, 0.65), ET), ((0.9, 0.55, 0.1), ED), ((0.4, 0.7, 0.1), NCR)],
)
def test_threshold_cascade(p, expected):
    assert threshold_compose(_probs(*p)).voxels[0, 0, 0] == expected


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float32, (3, 4, 4, 3), elements=st.floats(0, 1, width=32)),
    st.floats(0.05, 0.95),
    st.floats(0.05, 0.95),
    st.floats(0.05, 0.95),
)
def test_threshold_nesting(ch, t_wt, t_tc, t_et):
    rules = PostprocRules(thresholds={"WT": t_wt, "TC": t_tc, "ET": t_et})
    lab = threshold_compose(ProbVolume(list(ch)), rules)
    wt, tc, et = (compose_region(lab, r).voxels for r in RegionId)
    assert not (et & ~tc).any() and not (tc & ~wt).any()


def _blob_case(n_vox, code, conf, shape=(12, 12, 12)):
    v = np.zeros(shape, np.uint8)
    flat = v.reshape(-1, order="F")
    flat[:n_vox] = code  # first n voxels along x: one contiguous run
    v = flat.reshape(shape, order="F")
    ch = {RegionId.WT: 0.0, RegionId.TC: 0.0, RegionId.ET: 0.0}
    region = {ET: RegionId.ET, NCR: RegionId.TC, ED: RegionId.WT}[code]
    ch[region] = conf
    probs = ProbVolume([np.where(v > 0, ch[r], 0.0).astype(np.float32) for r in RegionId])
    return LabelVolume(v), probs


def test_small_low_confidence_et_removed():
    lab, probs = _blob_case(10, ET, 0.5)
    out = remove_small_regions(lab, probs)
    assert not out.voxels.any()


def test_small_confident_et_kept():
    lab, probs = _blob_case(10, ET, 0.95)
    assert remove_small_regions(lab, probs) == lab


def test_large_ed_kept_regardless_of_confidence():
    lab, probs = _blob_case(600, ED, 0.1, shape=(30, 30, 30))
    assert remove_small_regions(lab, probs) == lab


def test_small_ed_below_500_removed():
    lab, probs = _blob_case(400, ED, 0.1, shape=(30, 30, 30))
    assert not remove_small_regions(lab, probs).voxels.any()


def test_removal_is_in_mm3():
    # 40 voxels at 2 mm^3 each = 80 mm^3 >= 75: kept
    lab, probs = _blob_case(40, ET, 0.1)
    lab = LabelVolume(lab.voxels, (1, 1, 2))
    probs = ProbVolume(probs.channels, (1, 1, 2))
    assert remove_small_regions(lab, probs) == lab


def test_removal_without_probs_is_size_only():
    lab, _ = _blob_case(10, ET, 0.99)
    assert not remove_small_regions(lab).voxels.any()


def test_removal_geometry_mismatch():
    lab, probs = _blob_case(10, ET, 0.5)
    with pytest.raises(GeometryMismatch):
        remove_small_regions(lab, ProbVolume(probs.channels, (1, 1, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_removal_monotone_in_confidence_ceiling(seed):
    spec = random_spec(seed, (20, 20, 20), n_primitives=6)
    lab, probs = generate(spec)
    prev = None
    for theta in (0.0, 0.5, 0.9, 0.95, 1.0):
        out = remove_small_regions(lab, probs, PostprocRules(confidence_ceiling=theta, min_volume_mm3={"NCR": 300, "ET": 300, "ED": 800}))
        fg = out.voxels > 0
        assert not (fg & (lab.voxels == 0)).any()
        if prev is not None:
            assert not (fg & ~prev).any()
        prev = fg


def test_center_fill_hollow_shell():
    pred, gt = hollow_et_case()
    filled = center_fill(pred)
    c = tuple(n // 2 for n in pred.shape)
    assert pred.voxels[c] == BACKGROUND and filled.voxels[c] == NCR
    before = dice(compose_region(pred, "TC"), compose_region(gt, "TC"))
    after = dice(compose_region(filled, "TC"), compose_region(gt, "TC"))
    assert after > before and after == 100.0


def test_center_fill_relabels_enclosed_ed():
    pred, _ = hollow_et_case()
    v = np.array(pred.voxels)
    v[7, 7, 7] = ED
    out = center_fill(LabelVolume(v))
    assert out.voxels[7, 7, 7] == NCR


def test_center_fill_solid_and_empty_unchanged():
    solid, _ = generate(FixtureSpec(Dims(9, 9, 9), primitives=(ball(ET, (4, 4, 4), 3),)))
    assert center_fill(solid) == solid
    empty = LabelVolume(np.zeros((5, 5, 5), np.uint8))
    assert center_fill(empty) == empty


@pytest.mark.parametrize("seed", range(15))
def test_center_fill_properties(seed):
    lab, _ = generate(random_spec(seed, (18, 18, 18), n_primitives=5))
    out = center_fill(lab)
    assert ((lab.voxels == ET) <= (out.voxels == ET)).all()
    assert compose_region(out, "TC").count() >= compose_region(lab, "TC").count()
    assert center_fill(out) == out


def test_ensemble_mean():
    a = _const_probs((2, 2, 2), 0.2, 0.2, 0.2)
    b = _const_probs((2, 2, 2), 0.8, 0.8, 0.8)
    m = ensemble_mean([a, b])
    assert np.all(m.channel("WT") == np.float32(0.5))
    assert ensemble_mean([a]) == a
    assert ensemble_mean([a, a, a]) == a


def test_ensemble_errors():
    with pytest.raises(EmptyEnsemble):
        ensemble_mean([])
    with pytest.raises(GeometryMismatch):
        ensemble_mean([_const_probs((2, 2, 2)), _const_probs((2, 2, 3))])


def test_majority_vote():
    a = LabelVolume(np.full((1, 1, 3), ET, np.uint8))
    b = LabelVolume(np.array([[[ET, NCR, 0]]], np.uint8))
    c = LabelVolume(np.array([[[NCR, ED, 0]]], np.uint8))
    assert majority_vote([a, b, c]).voxels.ravel().tolist() == [ET, NCR, 0]


def test_pipeline_baseline_is_plain_cascade():
    _, probs = generate(random_spec(3, (16, 16, 16)))
    rules = PostprocRules(thresholds={"WT": 0.5, "TC": 0.5, "ET": 0.5}, center_fill=False, region_removal=False)
    assert run_pipeline(probs, rules) == threshold_compose(probs, rules)
    off = PipelineStages(threshold=False, region_removal=False, center_fill=False)
    assert run_pipeline(probs, PostprocRules(), off) == threshold_compose(probs, rules)


def test_pipeline_suppresses_spurious_et_blob():
    spec = FixtureSpec(Dims(20, 20, 20), seed=1, primitives=(ball(ET, (10, 10, 10), 1.5, level=0.62),), jitter=0.0)
    lab, probs = generate(spec)
    assert 0 < (lab.voxels == ET).sum() < 75
    out = run_pipeline(probs)
    assert not out.voxels.any()
    empty = compose_region(LabelVolume(np.zeros(lab.shape, np.uint8)), "ET")
    assert lesionwise(compose_region(threshold_compose(probs), "ET"), empty).dice == 0.0
    assert lesionwise(compose_region(out, "ET"), empty).dice == 100.0


@pytest.mark.parametrize("seed", range(8))
def test_pipeline_deterministic_and_stages_idempotent(seed):
    lab, probs = generate(random_spec(seed, (18, 18, 18), n_primitives=5, level=0.7))
    a, b = run_pipeline(probs), run_pipeline(probs)
    assert a == b
    rr = remove_small_regions(lab, probs)
    assert remove_small_regions(rr, probs) == rr


def test_pipeline_vote_mode():
    _, p1 = generate(random_spec(1, (16, 16, 16)))
    out = run_pipeline([p1, p1, p1], stages=PipelineStages(ensemble_mode="vote"))
    assert out == run_pipeline(p1)
