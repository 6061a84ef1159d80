import numpy as np
import pytest

from tumoreval.errors import PrimitiveOutOfBounds
from tumoreval.fixtures import FixtureSpec, Primitive, ball, box, generate, random_spec, shell
from tumoreval.postproc import PostprocRules, threshold_compose
from tumoreval.volume import ET, NCR, Dims, RegionId, Spacing


def test_ball_matches_brute_force_count():
    c = (10, 10, 10)
    lab, _ = generate(FixtureSpec(Dims(21, 21, 21), primitives=(ball(ET, c, 3),)))
    brute = sum(
        1
        for x in range(21)
        for y in range(21)
        for z in range(21)
        if (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= 9
    )
    assert (lab.voxels == ET).sum() == brute == 123


def test_empty_spec():
    lab, probs = generate(FixtureSpec(Dims(5, 6, 7), jitter=0.0))
    assert not lab.voxels.any()
    assert all(not c.any() for c in probs.channels)


def test_same_seed_same_output():
    spec = random_spec(42)
    a, b = generate(spec), generate(spec)
    assert a[0] == b[0] and a[1] == b[1]
    c = generate(FixtureSpec(spec.dims, spec.spacing, 43, spec.primitives))
    assert not np.array_equal(a[1].channels[0], c[1].channels[0])


def test_out_of_bounds():
    with pytest.raises(PrimitiveOutOfBounds):
        generate(FixtureSpec(Dims(10, 10, 10), primitives=(ball(ET, (1, 5, 5), 3),)))
    # 2 mm voxels halve the extent in index units
    generate(FixtureSpec(Dims(10, 10, 10), Spacing(1, 1, 2), primitives=(ball(ET, (5, 5, 2), 4),)))


def test_last_primitive_wins_and_shell_keeps_core():
    spec = FixtureSpec(Dims(15, 15, 15), primitives=(ball(NCR, (7, 7, 7), 5), shell(ET, (7, 7, 7), 5, 3)))
    lab, _ = generate(spec)
    assert lab.voxels[7, 7, 7] == NCR
    assert lab.voxels[7, 7, 11] == ET
    assert lab.voxels[7, 7, 12] == ET


def test_box_primitive():
    lab, _ = generate(FixtureSpec(Dims(10, 10, 10), primitives=(box(ET, (5, 5, 5), (1, 2, 0)),)))
    assert (lab.voxels == ET).sum() == 3 * 5 * 1


@pytest.mark.parametrize("seed", range(10))
def test_probabilities_recover_labels(seed):
    lab, probs = generate(random_spec(seed, level=0.75))
    rules = PostprocRules(thresholds={"WT": 0.5, "TC": 0.5, "ET": 0.5})
    assert threshold_compose(probs, rules) == lab


def test_probability_bounds():
    spec = FixtureSpec(Dims(12, 12, 12), seed=3, primitives=(ball(ET, (6, 6, 6), 3, level=0.8),), level=0.9, jitter=1.0)
    lab, probs = generate(spec)
    inside = lab.voxels == ET
    et = probs.channel(RegionId.ET)
    assert et[inside].min() >= np.float32(0.8) and et[~inside].max() <= np.float32(0.1) + 1e-7


def test_from_dict():
    spec = FixtureSpec.from_dict(
        {"dims": [8, 8, 8], "seed": 5, "primitives": [{"kind": "ball", "code": "ET", "center": [4, 4, 4], "radii": 2}]}
    )
    assert spec.primitives[0] == Primitive("ball", ET, (4, 4, 4), 2)
