import math
import random
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from recurrence.domain.amenable import (  # noqa: E402
    ExplicitVisitSet,
    FolnerBox,
    LatticeCosetSet,
    SyndeticWitness,
    Verdict,
    amenable_uniform_bound,
    ap_characterization,
    box_banach_density,
    box_ladder,
    box_sums,
    core_bound,
    exponent_box,
    folner_defect,
    folner_defect_enumerated,
    folner_set_defect,
    intersect_translates,
    largest_empty_cube,
    lemma42_check,
    lemma42_threshold,
    lemma43_density,
    symmetric_difference_invariance,
)
from recurrence.domain.circle import CirclePoint  # noqa: E402
from recurrence.domain.covering import (  # noqa: E402
    rotation_covering_K,
    torus_grid,
    verify_uniform_bound,
)
from recurrence.domain.entourage import Cylinder, MetricBall  # noqa: E402
from recurrence.domain.errors import (  # noqa: E402
    BoundViolationError,
    RegionError,
)
from recurrence.domain.returns import Window, return_set  # noqa: E402
from recurrence.domain.systems import (  # noqa: E402
    RotationSystem,
    SubstitutionSystem,
    SymbolicPoint,
    TorusPoint,
    TorusZdAction,
)


def test_folner_box_basics():
    box = FolnerBox((1, -2), (3, 4))
    assert box.volume == 12
    assert box.upper == (4, 2)
    assert len(box.points()) == 12
    assert box.translate((1, 1)).corner == (2, -1)
    assert box.contains_box(FolnerBox((2, 0), (2, 2)))
    assert not box.contains_box(FolnerBox((2, 0), (3, 2)))
    with pytest.raises(ValueError):
        FolnerBox((0,), (0,))
    with pytest.raises(ValueError):
        FolnerBox((0, 0), (1,))


@pytest.mark.parametrize('n', [1, 2, 5, 10, 40])
def test_unit_translation_defect(n):
    for d in (1, 2, 3):
        box = FolnerBox.cube(d, n)
        t = (1,) + (0,) * (d - 1)
        assert folner_defect(box, t) == Fraction(2, n)


def test_defect_formula_matches_enumeration():
    rng = random.Random(11)
    for _ in range(50):
        d = rng.randint(1, 3)
        sides = tuple(rng.randint(1, 7) for _ in range(d))
        box = FolnerBox(tuple(rng.randint(-5, 5) for _ in range(d)), sides)
        t = tuple(rng.randint(-8, 8) for _ in range(d))
        assert folner_defect(box, t) == folner_defect_enumerated(box, t)


def test_set_defect_and_ladder_shrink():
    boxes = box_ladder(1, [10, 100, 1000])
    defects = [folner_set_defect(box, [(0,), (1,)]) for box in boxes]
    assert defects == [Fraction(1, 10), Fraction(1, 100), Fraction(1, 1000)]
    defects = [folner_defect(box, (3,)) for box in box_ladder(1, [10, 100])]
    assert defects[1] < defects[0]


def test_symmetric_difference_is_translation_invariant():
    rng = random.Random(5)
    for _ in range(20):
        A = {(rng.randint(0, 9), rng.randint(0, 9)) for _ in range(15)}
        B = {(rng.randint(0, 9), rng.randint(0, 9)) for _ in range(15)}
        t = (rng.randint(-20, 20), rng.randint(-20, 20))
        assert symmetric_difference_invariance(A, B, t)


def test_lemma42_cases():
    box = FolnerBox.cube(1, 10)
    half = lemma42_check(box, [(0,), (5,)])
    assert half.holds
    assert half.ratio == 2
    assert half.intersection == FolnerBox((0,), (5,))
    assert not lemma42_check(box, [(0,), (6,)]).holds
    empty = lemma42_check(box, [(0,), (10,)])
    assert not empty.holds
    assert empty.ratio == math.inf
    assert empty.intersection is None


def test_lemma42_thresholds():
    assert lemma42_threshold(1, [(0,), (5,)]) == 10
    assert lemma42_threshold(2, [(0, 0), (1, 1)]) == 4


def test_lemma42_random_suite():
    rng = random.Random(42)
    for _ in range(50):
        d = rng.randint(1, 3)
        H = [
            tuple(rng.randint(-4, 4) for _ in range(d))
            for _ in range(rng.randint(1, 4))
        ]
        threshold = lemma42_threshold(d, H)
        for side in (threshold, threshold + 1, 2 * threshold + 3):
            corner = tuple(rng.randint(-10, 10) for _ in range(d))
            assert lemma42_check(FolnerBox.cube(d, side, corner), H).holds
        if threshold > 1:
            below = FolnerBox.cube(d, threshold - 1)
            assert not lemma42_check(below, H).holds


def test_intersection_matches_enumeration():
    box = FolnerBox((0, 0), (6, 5))
    H = [(0, 0), (2, 1), (1, 3)]
    core = intersect_translates(box, H)
    expected = set.intersection(
        *(box.translate(tuple(-v for v in h)).points() for h in H)
    )
    assert core is not None
    assert core.points() == expected


def test_lattice_coset_membership():
    evens = LatticeCosetSet.multiples(2)
    assert evens.density() == Fraction(1, 2)
    assert evens.contains((4,))
    assert evens.contains((-6,))
    assert not evens.contains((3,))
    mixed = LatticeCosetSet((2, 3), frozenset({(1, 2), (3, 5)}))
    assert mixed.density() == Fraction(1, 6)
    assert mixed.count(FolnerBox.cube(2, 6)) == 6


def test_box_sums_match_brute_force():
    rng = np.random.default_rng(9)
    indicator = rng.random((12, 9)) < 0.3
    sides = (4, 3)
    sums = box_sums(indicator, sides)
    assert sums.shape == (9, 7)
    for i in range(9):
        for j in range(7):
            expected = indicator[i:i + 4, j:j + 3].sum()
            assert sums[i, j] == expected
    with pytest.raises(RegionError):
        box_sums(indicator, (13, 1))


def test_explicit_visit_set_region():
    B = ExplicitVisitSet.from_times([1, 4, 7, 50], 0, 20)
    assert B.count(FolnerBox((0,), (10,))) == 3
    assert B.contains((4,))
    with pytest.raises(RegionError):
        B.mask(FolnerBox((15,), (10,)))


def test_syndetic_witness_rejects_gaps():
    threes = LatticeCosetSet.multiples(3)
    region = FolnerBox((0,), (50,))
    SyndeticWitness(((0,), (1,), (2,)), region, threes)
    with pytest.raises(ValueError):
        SyndeticWitness(((0,), (1,)), region, threes)


def test_lemma43_bound_is_not_tight_on_multiples_of_three():
    threes = LatticeCosetSet.multiples(3)
    K = ((0,), (1,), (2,))
    witness = SyndeticWitness(K, FolnerBox((0,), (400,)), threes)
    ladder = lemma43_density(threes, witness, box_ladder(1, [3, 6, 30, 300]))
    assert ladder.bound == Fraction(1, 6)
    assert ladder.threshold_index == 1
    assert ladder.frequencies[-1] == Fraction(1, 3)
    assert ladder.bound < ladder.frequencies[-1] < 1
    for frequency, exact in zip(ladder.frequencies, ladder.exact_bounds):
        assert frequency >= exact


def test_lemma43_two_dimensional_lattice():
    B = LatticeCosetSet.multiples(2, 3)
    K = exponent_box((1, 2))
    assert len(K) == 6
    witness = SyndeticWitness(K, FolnerBox((0, 0), (30, 30)), B)
    ladder = lemma43_density(B, witness, box_ladder(2, [6, 12, 24]))
    assert ladder.threshold_index == 0
    assert ladder.bound == Fraction(1, 12)
    assert all(f == Fraction(1, 6) for f in ladder.frequencies)


def test_lemma43_random_lattices():
    rng = random.Random(3)
    for _ in range(50):
        modulus = rng.randint(2, 6)
        residues = frozenset(
            (r,) for r in rng.sample(range(modulus), rng.randint(1, modulus))
        )
        B = LatticeCosetSet((modulus,), residues)
        K = tuple((k,) for k in range(modulus))
        witness = SyndeticWitness(K, FolnerBox((0,), (3000,)), B)
        boxes = box_ladder(1, [4 * modulus, 40 * modulus, 400 * modulus])
        ladder = lemma43_density(B, witness, boxes)
        assert ladder.threshold_index is not None
        for frequency in ladder.frequencies[ladder.threshold_index:]:
            assert frequency >= Fraction(1, 2 * len(K))


def test_lemma43_region_must_cover_boxes():
    evens = LatticeCosetSet.multiples(2)
    witness = SyndeticWitness(((0,), (1,)), FolnerBox((0,), (20,)), evens)
    with pytest.raises(RegionError):
        lemma43_density(evens, witness, box_ladder(1, [40]))


def test_core_bound():
    box = FolnerBox.cube(1, 10)
    assert core_bound(box, [(0,), (1,), (2,)]) == Fraction(8, 30)
    assert core_bound(box, [(0,), (10,)]) == 0


def test_single_visit_is_not_almost_periodic():
    B = ExplicitVisitSet.from_times([1], 0, 1000)
    verdict = ap_characterization(B, [10, 100], FolnerBox((0,), (1000,)))
    assert verdict.verdict is Verdict.NOT_AP
    assert verdict.witnesses[0] == FolnerBox((2,), (10,))
    assert verdict.witnesses[1].sides == (100,)
    assert all(B.count(w) == 0 for w in verdict.witnesses)
    assert verdict.syndetic_bound == 0
    assert verdict.to_payload()['verdict'] == 'NOT-AP'


def test_single_one_point_has_thick_empty_boxes():
    system = SubstitutionSystem.from_mapping({'0': '00', '1': '10'})
    point = SymbolicPoint('1')
    profile = return_set(system, point, point, Cylinder(1), Window(0, 3000))
    assert profile.times.tolist() == [0]
    B = ExplicitVisitSet.from_times(profile.times.tolist(), 0, 3000)
    ladder = [10, 100, 1000]
    verdict = ap_characterization(B, ladder, B.region)
    assert verdict.verdict is Verdict.NOT_AP
    assert [w.sides for w in verdict.witnesses] == [(W,) for W in ladder]
    assert all(B.count(w) == 0 for w in verdict.witnesses)
    for W, density in verdict.densities:
        assert density <= Fraction(1, W)
    for W in (1, 2, 5, 10, 100, 1000, 3000):
        estimate = box_banach_density(B.indicator, (W,), (0,))
        assert estimate.min_frequency <= Fraction(1, W)


def test_golden_returns_are_almost_periodic():
    system = RotationSystem.golden()
    for radius in (0.05, 0.15):
        ball = MetricBall(radius)
        x = CirclePoint(0)
        profile = return_set(system, x, x, ball, Window(0, 10_000))
        B = ExplicitVisitSet.from_times(profile.times.tolist(), 0, 10_000)
        verdict = ap_characterization(B, [100, 1000], B.region)
        assert verdict.verdict is Verdict.AP_CONSISTENT
        assert verdict.witnesses == ()
        assert verdict.max_gap == profile.max_gap
        K = rotation_covering_K(system, ball).K
        assert abs(verdict.max_gap - K) <= 1
        assert verdict.syndetic_bound == Fraction(1, verdict.max_gap + 1)


def test_largest_empty_cube():
    indicator = np.ones((6, 6), dtype=np.bool_)
    assert largest_empty_cube(indicator) == 0
    indicator[1:4, 2:5] = False
    assert largest_empty_cube(indicator) == 3


def product_action():
    return TorusZdAction.from_rotations(
        [RotationSystem.golden(), RotationSystem.quadratic(0, 1, 2, 1)]
    )


def test_amenable_bound_on_product_torus():
    action = product_action()
    ball = MetricBall(0.3)
    report = amenable_uniform_bound(
        action,
        ball,
        torus_grid(2, 2),
        (20, 20),
        60,
        certificate_entourage=MetricBall(0.3),
    )
    assert report.label == 'box-banach'
    assert report.certificate['exponents'] == [2, 1]
    assert report.asymptotic_bound == Fraction(1, 12)
    assert report.certified_bound == Fraction(18 * 19, 6 * 400)
    assert report.passed
    assert len(report.rows) == 4


def test_amenable_bound_matches_cascade_in_one_dimension():
    golden = RotationSystem.golden()
    action = TorusZdAction.from_rotations([golden])
    ball = MetricBall(0.15)
    points = [CirclePoint.from_fraction(Fraction(j, 7)) for j in range(7)]
    box_report = amenable_uniform_bound(
        action, ball, [TorusPoint((p,)) for p in points], (200,), 5000
    )
    line_report = verify_uniform_bound(golden, ball, points, 200, 5000)
    assert [r.min_frequency for r in box_report.rows] == [
        r.min_frequency for r in line_report.rows
    ]


def test_amenable_bound_checks_certificate():
    action = product_action()
    with pytest.raises(ValueError):
        amenable_uniform_bound(
            action,
            MetricBall(0.1),
            torus_grid(2, 2),
            (10, 10),
            20,
            certificate_entourage=MetricBall(0.3),
        )
    with pytest.raises(ValueError):
        amenable_uniform_bound(
            action, MetricBall(0.3), torus_grid(2, 2), (10,), 20
        )


def test_violation_is_reported():
    B = ExplicitVisitSet.from_times([0, 2, 4, 6, 8, 10], 0, 12)
    witness = SyndeticWitness(((0,), (1,)), FolnerBox((0,), (11,)), B)
    ladder = lemma43_density(B, witness, box_ladder(1, [4, 8]))
    assert ladder.frequencies == (Fraction(1, 2), Fraction(1, 2))
    with pytest.raises(BoundViolationError):
        fake = LatticeCosetSet.multiples(4)
        lemma43_density(fake, witness, box_ladder(1, [4, 8]))


def test_box_banach_density_finds_sparsest_placement():
    indicator = np.ones((8, 8), dtype=np.bool_)
    indicator[5:7, 1:3] = False
    estimate = box_banach_density(indicator, (2, 2), (10, -4))
    assert estimate.min_frequency == 0
    assert estimate.argmin_corner == (15, -3)
    assert estimate.box_sides == (2, 2)
    lattice = LatticeCosetSet.multiples(2, 2)
    region = FolnerBox.cube(2, 12)
    estimate = box_banach_density(lattice.mask(region), (4, 4), (0, 0))
    assert estimate.min_frequency == Fraction(1, 4)
