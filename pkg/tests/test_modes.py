import itertools

import numpy as np
import pytest

from tisdyn import errors
from tisdyn.catalog import default_side_grouping, default_technologies
from tisdyn.demo import demo_initial_state, demo_timeline
from tisdyn.dynamics import ParameterBlock, ParameterTimeline, SimulationConfig, TimelinePiece, Trajectory, simulate
from tisdyn.modes import (
    GAP,
    MODE_COLUMNS,
    Aggregation,
    EpsilonPolicy,
    Mode,
    ModeLabel,
    aggregate_side_externality,
    aggregate_side_coefficients,
    classify_pair,
    mode_series,
    side_mode_series,
)

TECHS = default_technologies()
ICEV, HEV, BEV = TECHS

# (sign of c_ij, sign of c_ji) -> (mode, beneficiary, victim) for the pair (i, j)
SIGN_TABLE = {
    (1, 1): (Mode.COMPETITION, None, None),
    (-1, -1): (Mode.SYMBIOSIS, None, None),
    (0, 0): (Mode.NEUTRALISM, None, None),
    (-1, 1): (Mode.PARASITISM, "i", "j"),
    (1, -1): (Mode.PARASITISM, "j", "i"),
    (-1, 0): (Mode.COMMENSALISM, "i", None),
    (0, -1): (Mode.COMMENSALISM, "j", None),
    (1, 0): (Mode.AMENSALISM, None, "i"),
    (0, 1): (Mode.AMENSALISM, None, "j"),
}


def pair_block(c_ij, c_ji, sub_dimensions=("x",)):
    m = len(sub_dimensions)
    c = np.zeros((2, 2, m))
    c[0, 1, :], c[1, 0, :] = c_ij, c_ji
    return ParameterBlock(TECHS[:2], sub_dimensions, np.zeros((2, m)), np.zeros((2, m)), c)


def constant_trajectory(levels, start=2000, end=2005):
    times = np.arange(start, end + 1, dtype=float)
    return Trajectory(TECHS[:2], ("x",), times, np.repeat(np.asarray(levels, float)[None, :, None], len(times), 0))


def test_every_sign_pair_maps_to_one_mode():
    for (s_ij, s_ji), (mode, beneficiary, victim) in SIGN_TABLE.items():
        label = classify_pair(0.3 * s_ij, 0.2 * s_ji)
        assert (label.mode, label.beneficiary, label.victim) == (mode, beneficiary, victim)
    assert len(SIGN_TABLE) == 9


def test_competition():
    assert classify_pair(0.3, 0.2).mode is Mode.COMPETITION


def test_parasitism_names_first_as_beneficiary():
    label = classify_pair(-0.3, 0.2, first=HEV, second=ICEV)
    assert label.mode is Mode.PARASITISM
    assert label.beneficiary == HEV
    assert label.victim == ICEV
    assert label.describe(HEV, ICEV) == "HEV parasitizes ICEV"


def test_epsilon_band_is_zero():
    assert classify_pair(1e-9, -1e-9, EpsilonPolicy(1e-6)).mode is Mode.NEUTRALISM


def test_classification_is_symmetric():
    for x, y in itertools.product([-0.4, 0.0, 0.3], repeat=2):
        forward = classify_pair(x, y)
        backward = classify_pair(y, x)
        assert forward.mode is backward.mode
        swap = {"i": "j", "j": "i", None: None}
        assert backward.beneficiary == swap[forward.beneficiary]
        assert backward.victim == swap[forward.victim]


def test_classification_is_scale_invariant():
    for x, y in itertools.product([-0.4, 0.0, 0.3], repeat=2):
        for k in (0.01, 2.0, 1e3):
            assert classify_pair(k * x, k * y) == classify_pair(x, y)


def test_relative_threshold():
    policy = EpsilonPolicy(1e-6, relative=0.5)
    threshold = policy.threshold([0.1, 0.2, 0.3])
    assert threshold == pytest.approx(0.1)
    assert classify_pair(0.05, 0.2, policy, threshold=threshold).mode is Mode.AMENSALISM


def test_label_checks_named_parties():
    with pytest.raises(ValueError):
        ModeLabel(Mode.COMPETITION, beneficiary="i")
    with pytest.raises(ValueError):
        ModeLabel(Mode.PARASITISM, beneficiary="i")


def test_non_finite_coefficient_is_rejected():
    with pytest.raises(errors.NonFiniteValueError):
        classify_pair(np.nan, 0.1)


def test_externality_of_uncoupled_pair_is_zero():
    trajectory = constant_trajectory([1.0, 1.0])
    received = aggregate_side_externality(trajectory, pair_block(0.0, 0.0), ("x",), (0, 1), (2000, 2005))
    assert received == (0.0, 0.0)


def test_externality_by_hand():
    trajectory = constant_trajectory([1.0, 1.0])
    e_i, e_j = aggregate_side_externality(trajectory, pair_block(-0.2, 0.1), ("x",), (0, 1), (2000, 2005))
    assert (e_i, e_j) == pytest.approx((0.2, -0.1))
    label = classify_pair(-e_i, -e_j)
    assert label.mode is Mode.PARASITISM
    assert label.beneficiary == "i"


def test_externality_scales_quadratically_without_changing_mode():
    block = pair_block(-0.2, 0.1)
    small = aggregate_side_externality(constant_trajectory([1.0, 2.0]), block, ("x",), (0, 1), (2000, 2005))
    large = aggregate_side_externality(constant_trajectory([2.0, 4.0]), block, ("x",), (0, 1), (2000, 2005))
    assert large == pytest.approx(tuple(4 * e for e in small))
    assert classify_pair(-small[0], -small[1]) == classify_pair(-large[0], -large[1])


def test_externality_rejects_empty_side():
    with pytest.raises(errors.ConfigValidationError):
        aggregate_side_externality(constant_trajectory([1, 1]), pair_block(0.1, 0.1), (), (0, 1), (2000, 2005))


def test_coefficient_aggregation_sums_side():
    block = pair_block(np.array([0.1, -0.3]), np.array([0.2, 0.1]), ("x", "y"))
    assert aggregate_side_coefficients(block, ("x", "y"), (0, 1)) == pytest.approx((-0.2, 0.3))


def test_constant_symbiosis_series():
    block = pair_block(-0.1, -0.1)
    timeline = ParameterTimeline(tuple(TimelinePiece(float(s), block) for s in (2000, 2005, 2010)))
    series = mode_series(timeline, t_end=2015)
    assert [label.mode for label in series.labels("ICEV-HEV", "x")] == [Mode.SYMBIOSIS] * 3


def test_alternating_series_is_not_smoothed():
    pieces = tuple(
        TimelinePiece(float(s), pair_block(-0.1 if k % 2 else 0.1, 0.1)) for k, s in enumerate(range(2000, 2006))
    )
    series = mode_series(ParameterTimeline(pieces), t_end=2006)
    modes = [label.mode for label in series.labels("ICEV-HEV", "x")]
    assert modes == [Mode.COMPETITION, Mode.PARASITISM] * 3


def test_series_matches_sign_table_oracle():
    signs = list(SIGN_TABLE)
    pieces = tuple(
        TimelinePiece(float(2000 + k), pair_block(0.5 * s_ij, 0.25 * s_ji)) for k, (s_ij, s_ji) in enumerate(signs)
    )
    series = mode_series(ParameterTimeline(pieces), t_end=2000 + len(signs))
    for label, key in zip(series.labels("ICEV-HEV", "x"), signs):
        mode, beneficiary, victim = SIGN_TABLE[key]
        names = {"i": ICEV, "j": HEV, None: None}
        assert (label.mode, label.beneficiary, label.victim) == (mode, names[beneficiary], names[victim])


def test_missing_window_is_a_gap():
    timeline = ParameterTimeline((TimelinePiece(2000.0, pair_block(0.1, 0.1)),))
    series = mode_series(timeline, windows=[(2000, 2001), (2001, 2002)])
    labels = series.labels("ICEV-HEV", "x")
    assert labels[0].mode is Mode.COMPETITION
    assert labels[1] is None
    assert series.to_frame()["mode"].tolist() == ["competition", GAP]


def test_filled_window_is_a_gap():
    pieces = (
        TimelinePiece(2000.0, pair_block(0.1, 0.1)),
        TimelinePiece(2001.0, pair_block(0.1, 0.1), filled=True),
    )
    series = mode_series(ParameterTimeline(pieces), t_end=2002)
    assert series.labels("ICEV-HEV", "x")[1] is None


def test_empty_series_frame_has_header():
    block = ParameterBlock(TECHS[:1], ("x",), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))
    frame = mode_series(ParameterTimeline.constant(block, 2000), t_end=2001).to_frame()
    assert list(frame.columns) == MODE_COLUMNS
    assert frame.empty


def test_demo_market_share_modes():
    series = mode_series(demo_timeline(), t_end=2070)
    assert series.labels("ICEV-HEV", "market_share")[0].describe(ICEV, HEV) == "HEV parasitizes ICEV"
    assert {label.mode for label in series.labels("HEV-BEV", "market_share")} == {Mode.SYMBIOSIS}
    assert {label.mode for label in series.labels("ICEV-BEV", "market_share")} == {Mode.COMPETITION}
    assert {label.mode for label in series.labels("HEV-BEV", "patents")} == {Mode.SYMBIOSIS}


def technology_side(frame):
    return frame[frame["scope"] == "side:technology"].reset_index(drop=True)


def test_demo_side_modes():
    timeline = demo_timeline()
    trajectory = simulate(SimulationConfig(share_index=12), timeline, demo_initial_state())
    sides = default_side_grouping()
    series = side_mode_series(trajectory, timeline, sides)
    labels = series.labels("HEV-BEV", "side:technology")
    assert len(labels) == 3
    assert {label.mode for label in labels} == {Mode.SYMBIOSIS}
    doubled = Trajectory(trajectory.technologies, trajectory.sub_dimensions, trajectory.times, 2 * trajectory.levels)
    rescaled = side_mode_series(doubled, timeline, sides).to_frame()
    assert technology_side(rescaled).equals(technology_side(series.to_frame()))


def test_coefficient_aggregation_needs_no_trajectory():
    sides = default_side_grouping()
    series = side_mode_series(None, demo_timeline(), sides, aggregation=Aggregation.COEFFICIENTS, t_end=2070)
    assert len(series) == 3 * 3 * 2
    with pytest.raises(errors.ConfigValidationError):
        side_mode_series(None, demo_timeline(), sides, t_end=2070)
