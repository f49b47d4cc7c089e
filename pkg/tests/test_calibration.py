import warnings

import numpy as np
import pandas as pd
import pytest

from tisdyn import errors
from tisdyn.calibration import (
    CalibrationMethod,
    FitResult,
    ObservedSeries,
    WindowSpec,
    add_noise,
    fit_all,
    fit_window,
    goodness_of_fit,
    timeline_from_frame,
)
from tisdyn.catalog import DEFAULT_CATALOG, default_technologies
from tisdyn.dynamics import ParameterBlock, ParameterTimeline, SimulationConfig, SystemState, simulate

TECHS = default_technologies()

# two technologies: the first is harmed by the second, the second benefits from the first
A = np.array([0.3, 0.8])
B = np.array([0.03, 0.2])
C12, C21 = 0.05, -0.05


# three technologies, every pair coupled
A3 = np.array([0.3, 0.8, 0.5])
B3 = np.array([0.03, 0.2, 0.1])
C3 = np.array([[0.0, 0.05, 0.04], [-0.05, 0.0, 0.03], [-0.02, 0.06, 0.0]])

# an incumbent pushed out by a newcomer it feeds
DISPLACED = ParameterBlock(
    TECHS[:2],
    ("x",),
    np.array([[0.2], [0.5]]),
    np.array([[0.02], [0.1]]),
    np.array([[[0.0], [0.15]], [[-0.05], [0.0]]]),
)


def coupled_block(sub_dimensions=("x", "y")):
    m = len(sub_dimensions)
    c = np.zeros((2, 2, m))
    c[0, 1, :], c[1, 0, :] = C12, C21
    return ParameterBlock(TECHS[:2], sub_dimensions, np.repeat(A[:, None], m, 1), np.repeat(B[:, None], m, 1), c)


def observed(block, x0, start=1985, end=2000):
    config = SimulationConfig(start, end)
    trajectory = simulate(config, ParameterTimeline.constant(block, start), SystemState(np.asarray(x0, float), start))
    return ObservedSeries.from_trajectory(trajectory)


def logistic_series(start=1985, end=2000, zero_year=None):
    block = ParameterBlock(TECHS[:1], ("x",), np.array([[0.5]]), np.array([[0.05]]), np.zeros((1, 1, 1)))
    series = observed(block, [[1.0]], start, end)
    if zero_year is None:
        return series
    levels = series.levels.copy()
    levels[zero_year - start] = 0.0
    return ObservedSeries(series.technologies, series.sub_dimensions, series.years, levels)


def test_regression_recovers_logistic():
    fit = fit_window(logistic_series(1985, 1995), (1985, 1995))
    assert fit.ok
    assert fit.block.a[0, 0] == pytest.approx(0.5, rel=0.01)
    assert fit.block.b[0, 0] == pytest.approx(0.05, rel=0.01)
    assert fit.r2[0, 0] > 0.99


def test_refine_recovers_coupled_parameters():
    series = observed(coupled_block(), [[1.0, 2.0], [0.5, 0.2]])
    fit = fit_all(series, WindowSpec(length=15), method=CalibrationMethod.REFINE)
    assert len(fit) == 1
    block = fit.windows[0].block
    for d in range(2):
        assert block.a[:, d] == pytest.approx(A, rel=0.05)
        assert block.b[:, d] == pytest.approx(B, rel=0.05)
        assert block.c[0, 1, d] == pytest.approx(C12, rel=0.05)
        assert block.c[1, 0, d] == pytest.approx(C21, rel=0.05)
        assert np.sign(block.c[0, 1, d]) == 1
        assert np.sign(block.c[1, 0, d]) == -1


def test_refine_recovers_three_coupled_technologies():
    c = np.repeat(C3[:, :, None], 2, axis=2)
    block = ParameterBlock(TECHS, ("x", "y"), np.repeat(A3[:, None], 2, 1), np.repeat(B3[:, None], 2, 1), c)
    series = observed(block, [[1.0, 2.0], [0.5, 0.2], [0.2, 0.1]])
    fitted = fit_all(series, WindowSpec(length=15), method=CalibrationMethod.REFINE).windows[0].block
    assert fitted.a == pytest.approx(block.a, rel=0.05)
    assert fitted.b == pytest.approx(block.b, rel=0.05)
    off = ~np.eye(3, dtype=bool)
    assert fitted.c[off] == pytest.approx(c[off], rel=0.05)
    assert np.array_equal(np.sign(fitted.c), np.sign(c))


def test_constant_series_has_no_dynamics():
    years = np.arange(1985, 1995)
    levels = np.tile(np.array([0.5, 0.3, 0.2])[None, :, None], (len(years), 1, 1))
    fit = fit_window(ObservedSeries(TECHS, ("market_share",), years, levels), (1985, 1990))
    assert fit.ok
    assert np.all(fit.block.a == 0)
    assert np.all(fit.block.b == 0)
    assert np.all(fit.block.c == 0)


def test_window_count():
    fit = fit_all(logistic_series(1985, 1995))
    assert [(w.start, w.end) for w in fit] == [(s, s + 5) for s in range(1985, 1991)]


def test_window_spec_stride():
    assert WindowSpec(5, 5).windows(1985, 2000) == [(1985, 1990), (1990, 1995), (1995, 2000)]
    assert WindowSpec(5, 5).windows(1985, 1999) == [(1985, 1990), (1990, 1995)]
    with pytest.raises(errors.ConfigValidationError):
        WindowSpec(0)


def test_series_too_short_for_windows():
    with pytest.raises(errors.InsufficientDataError):
        fit_all(logistic_series(1985, 1988))


def test_zero_year_only_spoils_its_windows():
    fit = fit_all(logistic_series(1985, 2000, zero_year=1992))
    failed = [w.start for w in fit if w.failures]
    assert failed == list(range(1987, 1993))
    for window in fit:
        if window.failures:
            assert window.filled_from == 1986
            assert window.block is fit.windows[1].block
            assert any("zero level" in failure for failure in window.failures)
        else:
            assert not window.filled


def test_leading_failures_take_first_good_window():
    fit = fit_all(logistic_series(1985, 1995, zero_year=1985))
    assert fit.windows[0].filled_from == 1986
    assert fit.to_timeline().pieces[0].filled


def test_no_window_fits():
    series = logistic_series(1985, 1995)
    levels = np.full(series.levels.shape, np.nan)
    gaps = ObservedSeries(series.technologies, series.sub_dimensions, series.years, levels)
    with pytest.raises(errors.CalibrationError):
        fit_all(gaps)


def test_signs_survive_small_noise():
    series = observed(coupled_block(("x",)), [[1.0], [0.5]])
    estimates = []
    for seed in range(30):
        fit = fit_all(add_noise(series, 0.002, seed), WindowSpec(length=15))
        block = fit.windows[0].block
        estimates.append((block.c[0, 1, 0], block.c[1, 0, 0]))
    estimates = np.array(estimates)
    assert (estimates[:, 0] > 0).mean() >= 0.9
    assert (estimates[:, 1] < 0).mean() >= 0.9
    mean, spread = estimates.mean(axis=0), estimates.std(axis=0, ddof=1)
    assert np.all(np.abs(mean) > 2 * spread / np.sqrt(len(estimates)))


def test_well_determined_signs_survive_one_percent_noise():
    series = observed(DISPLACED, [[8.0], [0.1]])
    truth = np.sign(DISPLACED.c[:, :, 0])
    recovered = []
    for seed in range(200):
        window = fit_all(add_noise(series, 0.01, seed), WindowSpec(length=15)).windows[0]
        c, se = window.block.c[:, :, 0], window.se_c[:, :, 0]
        for i, j in ((0, 1), (1, 0)):
            if abs(c[i, j]) >= 10 * se[i, j]:
                recovered.append(np.sign(c[i, j]) == truth[i, j])
    assert len(recovered) >= 150
    assert np.mean(recovered) >= 0.95


def test_standard_errors_raise_no_warnings():
    series = observed(coupled_block(), [[1.0, 2.0], [0.5, 0.2]])
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        fit = fit_all(add_noise(series, 0.01, 3), WindowSpec(length=5))
    for window in fit:
        assert not (window.se_c < 0).any()
        assert not (window.se_b < 0).any()


def test_noise_is_reproducible():
    series = logistic_series(1985, 1990)
    assert np.array_equal(add_noise(series, 0.05, 1).levels, add_noise(series, 0.05, 1).levels)
    assert (add_noise(series, 5.0, 2).levels >= 0).all()


def test_goodness_of_fit():
    series = observed(coupled_block(), [[1.0, 2.0], [0.5, 0.2]])
    fit = fit_all(series, WindowSpec(length=15), method=CalibrationMethod.REFINE)
    frame = goodness_of_fit(fit, series)
    assert list(frame.columns) == ["window_start", "window_end", "sub_dimension", "r2", "rmse", "filled"]
    assert len(frame) == 2
    assert (frame["rmse"] < 1e-2).all()
    assert (frame["r2"] > 0.99).all()


def test_parameters_frame_reads_back():
    fit = fit_all(logistic_series(1985, 2000, zero_year=1992))
    frame = fit.to_frame()
    assert list(frame.columns) == ["window_start", "technology", "sub_dimension", "a", "b", "c_ICEV", "r2", "filled"]
    assert frame["r2"][frame["filled"]].isna().all()
    timeline = timeline_from_frame(frame, TECHS[:1])
    for piece, window in zip(timeline, fit):
        assert np.array_equal(piece.block.a, window.block.a)
        assert piece.filled == window.filled
    again = FitResult.from_frame(frame, TECHS[:1])
    assert [w.filled_from for w in again] == [w.filled_from for w in fit]


def test_parameter_table_needs_every_row():
    frame = fit_all(logistic_series(1985, 1995)).to_frame()
    frame = pd.concat([frame, frame.assign(technology="HEV").iloc[:1]])
    with pytest.raises(errors.ConfigValidationError, match="no row for"):
        timeline_from_frame(frame, TECHS[:2])


def test_observed_frame_rejects_unknown_sub_dimension():
    frame = pd.DataFrame({"year": [2000], "technology": ["ICEV"], "sub_dimension": ["patnets"], "level": [1.0]})
    with pytest.raises(errors.ConfigValidationError, match="patents"):
        ObservedSeries.from_frame(frame, TECHS, DEFAULT_CATALOG)


def test_observed_frame_rejects_duplicates():
    frame = pd.DataFrame(
        {"year": [2000, 2000], "technology": ["ICEV", "icev"], "sub_dimension": ["patents"] * 2, "level": [1.0, 2.0]}
    )
    with pytest.raises(errors.ConfigValidationError, match="more than one level"):
        ObservedSeries.from_frame(frame, TECHS, DEFAULT_CATALOG)


def test_observed_frame_leaves_gaps():
    frame = pd.DataFrame(
        {"year": [2000, 2002], "technology": ["ICEV", "BEV"], "sub_dimension": ["patents"] * 2, "level": [1.0, 2.0]}
    )
    series = ObservedSeries.from_frame(frame, TECHS, DEFAULT_CATALOG)
    assert list(series.years) == [2000, 2001, 2002]
    assert series.sub_dimensions == ("patents",)
    assert series.gaps.sum() == 7
    assert series.to_frame()["level"].tolist() == [1.0, 2.0]
