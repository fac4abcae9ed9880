import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

sys.path.append(str(Path(__file__).resolve().parents[1]))

from recurrence.domain.circle import CirclePoint  # noqa: E402
from recurrence.domain.entourage import (  # noqa: E402
    Cylinder,
    MetricBall,
    parse_entourage,
)
from recurrence.domain.errors import (  # noqa: E402
    BudgetExceededError,
    IncomparablePointsError,
    NotPrimitiveError,
)
from recurrence.domain.systems import (  # noqa: E402
    AnnulusPoint,
    AnnulusSystem,
    RotationSystem,
    SubstitutionSystem,
    SymbolicPoint,
    TorusPoint,
    TorusZdAction,
    equicontinuity_defect,
    in_entourage,
    iterate,
    language_words,
)


def single_one():
    return SubstitutionSystem.from_mapping({'0': '00', '1': '10'}, 'single')


def test_rotation_semigroup_law_is_exact():
    system = RotationSystem.golden()
    x = CirclePoint.from_fraction(Fraction(1, 7))
    for a, b in [(0, 0), (1, 2), (123, 9876), (10**4, 10**4)]:
        assert system.iterate(system.iterate(x, a), b) == system.iterate(
            x, a + b
        )


def test_rotation_rejects_negative_time():
    with pytest.raises(ValueError):
        RotationSystem.golden().iterate(CirclePoint(0), -1)


def test_rotation_balls_are_open():
    system = RotationSystem.golden()
    x = CirclePoint(0)
    edge = CirclePoint.from_fraction(Fraction(1, 4))
    inner = CirclePoint.from_fraction(Fraction(1, 8))
    assert not in_entourage(system, MetricBall(0.25), x, edge)
    assert in_entourage(system, MetricBall(0.25), x, inner)


def test_rotation_refuses_cylinders():
    with pytest.raises(IncomparablePointsError):
        RotationSystem.golden().in_entourage(
            Cylinder(2), CirclePoint(0), CirclePoint(0)
        )


def test_from_float_records_representation_error():
    system = RotationSystem.from_float(0.3)
    assert system.alpha_error >= 2.0**-53
    assert system.alpha.to_float() == pytest.approx(0.3)


def test_budget_refusal_when_error_blurs_radius():
    system = RotationSystem(CirclePoint.from_float(0.3), 1e-6)
    with pytest.raises(BudgetExceededError) as info:
        iterate(system, CirclePoint(0), 10**4, within=MetricBall(0.01))
    assert info.value.reason == 'budget-refusal'
    payload = info.value.as_payload()
    assert payload['error'] == 'budget-refusal'
    assert payload['accumulated_error'] > 0.01 * 0.1
    # same number of steps is fine for a wide enough ball
    iterate(system, CirclePoint(0), 10**4, within=MetricBall(1.0))


def test_refusal_payload_reason_is_not_overwritten():
    payload = BudgetExceededError('blurred', error=0.5, steps=3).as_payload()
    assert payload['error'] == 'budget-refusal'
    assert payload['steps'] == 3
    assert payload['detail'] == 'blurred'


def test_visit_mask_agrees_with_pointwise_check():
    system = RotationSystem.golden()
    x = CirclePoint.from_fraction(Fraction(1, 3))
    ball = MetricBall(0.05)
    mask = system.visit_mask(x, x, ball, 0, 500)
    for n in range(500):
        assert mask[n] == system.in_entourage(ball, system.iterate(x, n), x)


def test_fibonacci_fixed_point_prefix():
    fib = SubstitutionSystem.fibonacci()
    assert fib.require_primitive() == 2
    assert fib.prefix(fib.fixed_point(), 13) == '0100101001001'


def test_thue_morse_prefix():
    tm = SubstitutionSystem.thue_morse()
    assert tm.prefix(tm.fixed_point(), 8) == '01101001'


def test_fibonacci_language_is_sturmian():
    fib = SubstitutionSystem.fibonacci()
    assert language_words(fib, 3) == {'010', '100', '001', '101'}
    for n in range(1, 11):
        assert len(language_words(fib, n)) == n + 1


def test_language_words_are_factors_of_the_fixed_point():
    fib = SubstitutionSystem.fibonacci()
    text = fib.prefix(fib.fixed_point(), 2000)
    seen = {text[i:i + 6] for i in range(len(text) - 5)}
    assert language_words(fib, 6) == seen


def test_thue_morse_language_counts():
    tm = SubstitutionSystem.thue_morse()
    text = tm.prefix(tm.fixed_point(), 4096)
    for n in (2, 3, 5):
        seen = {text[i:i + n] for i in range(len(text) - n + 1)}
        assert language_words(tm, n) == seen


def test_metric_balls_compose_like_a_triangle():
    system = RotationSystem.golden()
    rng = np.random.default_rng(3)
    for radius in (1e-6, 0.01, 0.1, 0.2):
        ball = MetricBall(radius)
        reach = int(radius * 2**64)
        for _ in range(200):
            y = CirclePoint(int(rng.integers(0, 2**63)) * 2)
            x = y + CirclePoint(int(rng.integers(0, reach)))
            z = y - CirclePoint(int(rng.integers(0, reach)))
            assert in_entourage(system, ball, x, y)
            assert in_entourage(system, ball, y, z)
            assert in_entourage(system, MetricBall(2 * radius), x, z)
            assert in_entourage(system, MetricBall(3 * radius), x, z)


@pytest.mark.parametrize(
    'system', [SubstitutionSystem.fibonacci(), SubstitutionSystem.thue_morse()]
)
def test_factor_languages_are_consistent(system):
    for k in range(1, 9):
        shorter = language_words(system, k)
        longer = language_words(system, k + 1)
        assert {w[:-1] for w in longer} == shorter
        assert {w[1:] for w in longer} == shorter


def test_library_logging_follows_the_package_switch():
    messages = []
    sink = logger.add(messages.append, level='TRACE')
    try:
        logger.disable('recurrence')
        language_words(SubstitutionSystem.fibonacci(), 4)
        assert messages == []
        logger.enable('recurrence')
        language_words(SubstitutionSystem.fibonacci(), 4)
        assert any('legal words' in m for m in messages)
    finally:
        logger.remove(sink)
        logger.disable('recurrence')


def test_language_respects_maximum_length():
    with pytest.raises(ValueError):
        language_words(SubstitutionSystem.fibonacci(), 10, max_length=8)


def test_non_primitive_substitution_is_refused_for_language():
    system = single_one()
    assert system.primitive_power is None
    with pytest.raises(NotPrimitiveError):
        system.language_words(2)


def test_single_one_point_has_one_symbol_one():
    system = single_one()
    text = system.prefix(SymbolicPoint('1'), 64)
    assert text == '1' + '0' * 63


def test_prefix_refuses_unknown_seed():
    with pytest.raises(IncomparablePointsError):
        SubstitutionSystem.fibonacci().prefix(SymbolicPoint('x'), 4)


def test_substitution_validation():
    with pytest.raises(ValueError):
        SubstitutionSystem.from_mapping({'a': 'b', 'b': 'a'})
    with pytest.raises(ValueError):
        SubstitutionSystem.from_mapping({'a': 'ab', 'b': 'c'})
    with pytest.raises(ValueError):
        SubstitutionSystem.from_mapping({'a': 'ab', 'b': ''})


def test_shift_iterate_and_cylinders():
    fib = SubstitutionSystem.fibonacci()
    origin = fib.fixed_point()
    text = fib.prefix(origin, 40)
    moved = fib.iterate(origin, 5)
    assert fib.prefix(moved, 10) == text[5:15]
    mask = fib.visit_mask(origin, origin, Cylinder(3), 0, 30)
    expected = [text[n:n + 3] == text[:3] for n in range(30)]
    assert mask.tolist() == expected


def test_torus_action_commutes():
    golden = RotationSystem.golden()
    other = RotationSystem.quadratic(0, 1, 2, 1)
    action = TorusZdAction.from_rotations([golden, other])
    x = TorusPoint((CirclePoint(7), CirclePoint(11)))
    assert action.is_product()
    assert action.act(action.act(x, (3, 0)), (0, 5)) == action.act(
        x, (3, 5)
    )
    assert action.act(x, (-2, 4)) == action.act(
        action.act(x, (-1, 2)), (-1, 2)
    )


def test_torus_box_mask_matches_pointwise():
    action = TorusZdAction.from_rotations(
        [RotationSystem.golden(), RotationSystem.quadratic(0, 1, 2, 1)]
    )
    x = TorusPoint((CirclePoint(0), CirclePoint(0)))
    ball = MetricBall(0.2)
    mask = action.box_visit_mask(x, x, ball, (2, -3), (6, 7))
    for i in range(6):
        for j in range(7):
            moved = action.act(x, (2 + i, -3 + j))
            assert mask[i, j] == action.in_entourage(ball, moved, x)


def test_scalar_iterate_needs_z_action():
    action = TorusZdAction.from_rotations(
        [RotationSystem.golden(), RotationSystem.golden()]
    )
    with pytest.raises(ValueError):
        action.iterate(TorusPoint((CirclePoint(0), CirclePoint(0))), 1)


def test_annulus_gamma_variants():
    assert AnnulusSystem().gamma(2) == Fraction(2, 3)
    shifted = AnnulusSystem(gamma_shift=-1)
    assert shifted.gamma(2) == Fraction(1, 2)
    assert shifted.gamma(10) == Fraction(9, 10)
    pinned = AnnulusSystem(gamma_overrides=((3, Fraction(1, 5)),))
    assert pinned.gamma(3) == Fraction(1, 5)


def test_annulus_defect_matches_formula():
    system = AnnulusSystem(gamma_shift=-1)
    for n in range(1, 1001):
        defect = equicontinuity_defect(system, n)
        expected = float(system.gamma(2 * n)) * math.pi
        assert abs(defect - expected) < 1e-9


def test_annulus_orbits_stay_on_their_circle():
    system = AnnulusSystem()
    for level in (0, 1, 7, 40):
        point = system.iterate(AnnulusPoint(level, 0.3), 999)
        assert point.level == level
        assert 0.0 <= point.theta < 2 * math.pi


def test_digests_are_stable_and_distinct():
    assert RotationSystem.golden().digest() == RotationSystem.golden().digest()
    assert (
        RotationSystem.golden().digest()
        != SubstitutionSystem.fibonacci().digest()
    )


def test_parse_entourage_inverts_describe():
    for entourage in (MetricBall(0.05), Cylinder(3)):
        assert parse_entourage(entourage.describe()) == entourage
