"""
Estimating piecewise-constant a, b and c from annual indicator series.

Each window is fitted on its own.  The default method is a per-(technology, sub-dimension) least-squares regression of
the growth rate on the levels of all technologies present:

    y_t = (q_t - 1) / dt,    q_t = (X_{t+1} / X_t) ** dt

regressed on [1, m_i, m_j, m_k], where m is each level's geometric-path mean over the year, (X_{t+1} - X_t) /
(n (q - 1)) with n = 1 / dt.  The coefficients are (a, -b, -c_ij, -c_ik).  For dt = 1 this is the plain per-capita
growth (X_{t+1} - X_t) / X_t regressed on X_t.

The regression is a good starting point but keeps some discretisation bias, so "refine" polishes it with
scipy.optimize.least_squares on the one-year-ahead log-level error of the Euler simulator itself, fitting all
technologies of a sub-dimension together.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from tisdyn import errors
from tisdyn.catalog import DimensionCatalog, Technology, resolve_technology
from tisdyn.dynamics import (
    ParameterBlock,
    ParameterTimeline,
    SimulationConfig,
    SystemState,
    TimelinePiece,
    Trajectory,
    simulate,
)
from tisdyn.patterns import CROSS_COEFFICIENT_COLUMN_PATTERN

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["year", "technology", "sub_dimension", "level"]


class CalibrationMethod(str, Enum):
    OLS = "ols"
    REFINE = "refine"


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    """Annual levels indexed (year, technology, sub-dimension); NaN marks a gap."""

    technologies: Tuple[Technology, ...]
    sub_dimensions: Tuple[str, ...]
    years: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        levels = np.array(self.levels, dtype=float)
        if levels.shape != (len(years), len(self.technologies), len(self.sub_dimensions)):
            raise errors.ConfigValidationError(f"Observed levels have shape {levels.shape}, which does not match.")
        if np.any(np.diff(years) <= 0):
            raise errors.ConfigValidationError("Observed years must be strictly increasing.")
        if (np.nan_to_num(levels, nan=0.0) < 0).any() or np.isinf(levels).any():
            raise errors.ConfigValidationError("Observed levels must be finite and >= 0.")
        levels.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "levels", levels)

    @property
    def gaps(self) -> np.ndarray:
        return np.isnan(self.levels)

    @classmethod
    def from_frame(
        cls, frame: pd.DataFrame, technologies: Sequence[Technology], catalog: DimensionCatalog
    ) -> "ObservedSeries":
        missing = [column for column in SERIES_COLUMNS if column not in frame.columns]
        if missing:
            raise errors.ConfigValidationError(f"Observed data lacks the column(s) {', '.join(missing)}.")
        problems = []
        tech_index, sub_keys = {}, {}
        for name in frame["technology"].astype(str).unique():
            try:
                tech_index[name] = resolve_technology(name, technologies)
            except errors.ConfigValidationError as e:
                problems.append(e.message)
        for name in frame["sub_dimension"].astype(str).unique():
            try:
                sub_keys[name] = catalog.resolve(name)
            except errors.ConfigValidationError as e:
                problems.append(e.message)
        if problems:
            raise errors.ConfigValidationError(problems[0], problems)
        keys = tuple(key for key in catalog.keys() if key in set(sub_keys.values()))
        years = pd.to_numeric(frame["year"], errors="coerce")
        if years.isna().any() or (years != years.round()).any():
            raise errors.ConfigValidationError("Observed years must be whole numbers.")
        years = years.astype(int)
        span = np.arange(years.min(), years.max() + 1)
        levels = np.full((len(span), len(technologies), len(keys)), np.nan)
        seen = set()
        rows = zip(years, frame["technology"].astype(str), frame["sub_dimension"], frame["level"])
        for year, tech, sub, level in rows:
            cell = (year - span[0], tech_index[tech], keys.index(sub_keys[str(sub)]))
            if cell in seen:
                raise errors.ConfigValidationError(f"Observed data has more than one level for {year} {tech} {sub}.")
            seen.add(cell)
            levels[cell] = float(level)
        return cls(tuple(technologies), keys, span, levels)

    @classmethod
    def from_csv(cls, path: str, technologies: Sequence[Technology], catalog: DimensionCatalog) -> "ObservedSeries":
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise errors.ConfigValidationError(f'Cannot read observed data "{path}": {e}')
        return cls.from_frame(frame, technologies, catalog)

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory) -> "ObservedSeries":
        years, levels = trajectory.annual()
        return cls(trajectory.technologies, trajectory.sub_dimensions, years, levels)

    def to_frame(self) -> pd.DataFrame:
        n_years, n_tech, n_sub = self.levels.shape
        frame = pd.DataFrame(
            {
                "year": np.repeat(self.years, n_tech * n_sub),
                "technology": np.tile(np.repeat([str(t) for t in self.technologies], n_sub), n_years),
                "sub_dimension": np.tile(list(self.sub_dimensions), n_years * n_tech),
                "level": self.levels.reshape(-1),
            }
        )
        return frame.dropna(subset=["level"]).reset_index(drop=True)

    def window(self, start: int, end: int) -> np.ndarray:
        """Levels for the years start..end inclusive; years outside the data come back as NaN."""
        out = np.full((end - start + 1,) + self.levels.shape[1:], np.nan)
        for k, year in enumerate(range(start, end + 1)):
            found = np.flatnonzero(self.years == year)
            if found.size:
                out[k] = self.levels[found[0]]
        return out


def add_noise(series: ObservedSeries, relative_sd: float, seed: Optional[int] = None) -> ObservedSeries:
    """Multiplicative Gaussian noise, clipped at zero."""
    rng = np.random.default_rng(seed)
    noisy = series.levels * (1.0 + relative_sd * rng.standard_normal(series.levels.shape))
    return ObservedSeries(series.technologies, series.sub_dimensions, series.years, np.maximum(noisy, 0.0))


@dataclass(frozen=True)
class WindowSpec:
    length: int = 5
    stride: int = 1

    def __post_init__(self):
        if self.length < 1 or self.stride < 1:
            raise errors.ConfigValidationError("Window length and stride must be at least one year.")

    def windows(self, first_year: int, last_year: int) -> List[Tuple[int, int]]:
        return [(s, s + self.length) for s in range(first_year, last_year - self.length + 1, self.stride)]


@dataclass(frozen=True, eq=False)
class WindowFit:
    start: int
    end: int
    technologies: Tuple[Technology, ...]
    sub_dimensions: Tuple[str, ...]
    block: Optional[ParameterBlock]
    r2: np.ndarray
    residual_variance: np.ndarray
    se_a: np.ndarray
    se_b: np.ndarray
    se_c: np.ndarray
    condition_numbers: np.ndarray
    failures: Tuple[str, ...] = ()
    filled_from: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.block is not None and not self.failures

    @property
    def filled(self) -> bool:
        return self.filled_from is not None


@dataclass(frozen=True)
class FitResult:
    windows: Tuple[WindowFit, ...]
    method: CalibrationMethod = CalibrationMethod.OLS

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)

    @property
    def technologies(self) -> Tuple[Technology, ...]:
        return self.windows[0].technologies

    @property
    def sub_dimensions(self) -> Tuple[str, ...]:
        return self.windows[0].sub_dimensions

    def to_timeline(self) -> ParameterTimeline:
        pieces = [TimelinePiece(w.start, w.block, w.filled) for w in self.windows if w.block is not None]
        if not pieces:
            raise errors.CalibrationError("No window has parameters to simulate with.")
        return ParameterTimeline(tuple(pieces))

    def to_frame(self) -> pd.DataFrame:
        return parameters_frame(self.to_timeline(), {w.start: w.r2 for w in self.windows if w.block is not None})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, technologies: Sequence[Technology]) -> "FitResult":
        timeline = timeline_from_frame(frame, technologies)
        windows = []
        starts = timeline.starts + [None]
        donor = None
        for piece, following in zip(timeline.pieces, starts[1:]):
            if not piece.filled:
                donor = int(piece.start)
            rows = frame[frame["window_start"] == piece.start]
            r2 = np.full(piece.block.a.shape, np.nan)
            if "r2" in frame.columns:
                for _, row in rows.iterrows():
                    i = resolve_technology(str(row["technology"]), technologies)
                    r2[i, piece.block.sub_dimensions.index(row["sub_dimension"])] = float(row["r2"])
            end = int(following) if following is not None else int(piece.start) + 1
            windows.append(
                _window_fit(
                    int(piece.start),
                    end,
                    piece.block,
                    r2=r2,
                    filled_from=(donor or int(piece.start)) if piece.filled else None,
                )
            )
        return cls(tuple(windows))


def _window_fit(start, end, block, r2=None, filled_from=None, failures=()) -> WindowFit:
    shape = block.a.shape
    nan = np.full(shape, np.nan)
    return WindowFit(
        start,
        end,
        block.technologies,
        block.sub_dimensions,
        block,
        nan if r2 is None else r2,
        nan,
        nan,
        nan,
        np.full(block.c.shape, np.nan),
        nan,
        tuple(failures),
        filled_from,
    )


def parameters_frame(timeline: ParameterTimeline, r2: Optional[Dict[float, np.ndarray]] = None) -> pd.DataFrame:
    """window_start,technology,sub_dimension,a,b,c_<tech>...,r2,filled"""
    names = [str(t) for t in timeline.technologies]
    rows = []
    for piece in timeline:
        block = piece.block
        fitted = (r2 or {}).get(piece.start)
        for i, name in enumerate(names):
            for d, key in enumerate(block.sub_dimensions):
                row = {
                    "window_start": int(round(piece.start)),
                    "technology": name,
                    "sub_dimension": key,
                    "a": block.a[i, d],
                    "b": block.b[i, d],
                }
                for j, other in enumerate(names):
                    row[f"c_{other}"] = block.c[i, j, d]
                row["r2"] = np.nan if fitted is None or piece.filled else fitted[i, d]
                row["filled"] = piece.filled
                rows.append(row)
    columns = ["window_start", "technology", "sub_dimension", "a", "b"] + [f"c_{n}" for n in names] + ["r2", "filled"]
    return pd.DataFrame(rows, columns=columns)


def _as_flag(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "1", "yes")
    return bool(value)


def timeline_from_frame(frame: pd.DataFrame, technologies: Sequence[Technology]) -> ParameterTimeline:
    required = ["window_start", "technology", "sub_dimension", "a", "b"]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise errors.ConfigValidationError(f"Parameter table lacks the column(s) {', '.join(missing)}.")
    cross = {}
    for column in frame.columns:
        match = CROSS_COEFFICIENT_COLUMN_PATTERN.match(str(column))
        if match:
            cross[column] = resolve_technology(match.group("technology"), technologies)
    sub_dimensions = tuple(dict.fromkeys(frame["sub_dimension"].astype(str)))
    n, m = len(technologies), len(sub_dimensions)
    pieces = []
    for start, rows in frame.groupby("window_start", sort=True):
        a, b, c = np.zeros((n, m)), np.zeros((n, m)), np.zeros((n, n, m))
        seen = np.zeros((n, m), dtype=bool)
        for _, row in rows.iterrows():
            i = resolve_technology(str(row["technology"]), technologies)
            d = sub_dimensions.index(str(row["sub_dimension"]))
            a[i, d], b[i, d] = float(row["a"]), float(row["b"])
            for column, j in cross.items():
                c[i, j, d] = float(row[column])
            seen[i, d] = True
        if not seen.all():
            i, d = (int(k) for k in np.argwhere(~seen)[0])
            raise errors.ConfigValidationError(
                f"Parameter table has no row for {technologies[i]} / {sub_dimensions[d]} in window {start}."
            )
        filled = "filled" in rows.columns and any(_as_flag(v) for v in rows["filled"])
        pieces.append(TimelinePiece(float(start), ParameterBlock(tuple(technologies), sub_dimensions, a, b, c), filled))
    if not pieces:
        raise errors.ConfigValidationError("Parameter table is empty.")
    return ParameterTimeline(tuple(pieces))


def _path_means(x0: np.ndarray, x1: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    q = (x1 / x0) ** dt
    flat = np.abs(q - 1.0) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        means = (x1 - x0) / ((1.0 / dt) * (q - 1.0))
    means[flat] = x0[flat]
    return q, means


def _classify_columns(levels: np.ndarray) -> Tuple[List[int], List[int], List[str]]:
    """Split technologies into present (positive throughout) and absent (zero throughout); anything else fails."""
    present, absent, problems = [], [], []
    for i in range(levels.shape[1]):
        column = levels[:, i]
        if np.isnan(column).any():
            problems.append((i, "gap"))
        elif (column == 0).all():
            absent.append(i)
        elif (column > 0).all():
            present.append(i)
        else:
            problems.append((i, "zero level"))
    return present, absent, problems


def _standard_errors(variance: float, design: np.ndarray) -> np.ndarray:
    """Square roots of the covariance diagonal; a diagonal entry that rounds negative comes back as NaN."""
    diagonal = np.diag(variance * np.linalg.pinv(design.T @ design))
    with np.errstate(invalid="ignore"):
        return np.where(diagonal >= 0, np.sqrt(np.abs(diagonal)), np.nan)


def _ols(y: np.ndarray, design: np.ndarray):
    rank = np.linalg.matrix_rank(design)
    condition = float(np.linalg.cond(design))
    p = design.shape[1]
    if rank < p:
        if np.all(np.abs(y) < 1e-15):
            return np.zeros(p), 1.0, 0.0, np.zeros(p), condition, None
        return None, np.nan, np.nan, None, condition, f"rank-deficient design (condition number {condition:.3g})"
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    residuals = y - design @ beta
    ss_res = float(residuals @ residuals)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(y) - p
    variance = ss_res / dof if dof > 0 else np.nan
    se = _standard_errors(variance, design) if dof > 0 else np.full(p, np.nan)
    return beta, r2, variance, se, condition, None


def _one_year_ahead(x0, a, b, c, dt, steps, renormalize):
    x = x0.copy()
    for _ in range(steps):
        x = x + dt * x * (a - b * x - x @ c.T)
        np.maximum(x, 0.0, out=x)
        if renormalize:
            total = x.sum(axis=1, keepdims=True)
            x = np.where(total > 0, x / np.where(total > 0, total, 1.0), x)
    return x


class _Layout:
    """Where each free parameter of one sub-dimension lives in the flat vector handed to the optimiser."""

    def __init__(self, n: int, present: Sequence[int]):
        self.n = n
        self.slots = []
        for i in present:
            self.slots.append(("a", i, None))
            self.slots.append(("b", i, None))
            for j in present:
                if j != i:
                    self.slots.append(("c", i, j))

    def pack(self, a, b, c) -> np.ndarray:
        return np.array([a[i] if kind == "a" else b[i] if kind == "b" else c[i, j] for kind, i, j in self.slots])

    def unpack(self, theta):
        a, b, c = np.zeros(self.n), np.zeros(self.n), np.zeros((self.n, self.n))
        for value, (kind, i, j) in zip(theta, self.slots):
            if kind == "a":
                a[i] = value
            elif kind == "b":
                b[i] = value
            else:
                c[i, j] = value
        return a, b, c


def _refine(levels, present, a, b, c, dt, renormalize):
    steps = int(round(1.0 / dt))
    layout = _Layout(levels.shape[1], present)
    x0, x1 = levels[:-1], levels[1:]
    target = np.log(x1[:, present])

    def residuals(theta):
        pa, pb, pc = layout.unpack(theta)
        predicted = _one_year_ahead(x0, pa, pb, pc, dt, steps, renormalize)[:, present]
        return (np.log(np.maximum(predicted, 1e-300)) - target).ravel()

    start = layout.pack(a, b, c)
    result = optimize.least_squares(residuals, start, x_scale="jac", ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=2000)
    if not np.isfinite(result.x).all():
        raise ValueError("the optimiser left the finite range")
    ra, rb, rc = layout.unpack(result.x)
    m, p = result.fun.size, result.x.size
    variance = 2.0 * result.cost / (m - p) if m > p else np.nan
    se_flat = _standard_errors(variance, result.jac)
    sa, sb, sc = layout.unpack(se_flat)
    fitted = (result.fun.reshape(target.shape) + target)
    ss_res = ((fitted - target) ** 2).sum(axis=0)
    ss_tot = ((target - target.mean(axis=0)) ** 2).sum(axis=0)
    r2 = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0), 1.0)
    condition = float(np.linalg.cond(result.jac)) if result.jac.size else np.nan
    return ra, rb, rc, sa, sb, sc, r2, variance, condition


def fit_window(
    series: ObservedSeries,
    window: Tuple[int, int],
    dt: float = 0.125,
    method: CalibrationMethod = CalibrationMethod.OLS,
    share_index: Optional[int] = None,
) -> WindowFit:
    """
    Fit one window (start, end), sub-dimension by sub-dimension.

    The OLS default estimates the continuous-time coefficients from the growth regression; it recovers signs and
    magnitudes well but does not reproduce the discrete simulator exactly.  Re-simulating a fit within a few percent
    of its source trajectory is what CalibrationMethod.REFINE is for.
    """
    start, end = int(window[0]), int(window[1])
    method = CalibrationMethod(method)
    technologies, keys = series.technologies, series.sub_dimensions
    n, m = len(technologies), len(keys)
    observed = series.window(start, end)
    a, b, c = np.zeros((n, m)), np.zeros((n, m)), np.zeros((n, n, m))
    r2, variance, conditions = np.full((n, m), np.nan), np.full((n, m), np.nan), np.full((n, m), np.nan)
    se_a, se_b, se_c = np.full((n, m), np.nan), np.full((n, m), np.nan), np.full((n, n, m), np.nan)
    failures = []
    if len(observed) < 2:
        failures.append(f"window {start}-{end} has fewer than two years")

    for d, key in enumerate(keys if len(observed) >= 2 else ()):
        levels = observed[:, :, d]
        present, absent, problems = _classify_columns(levels)
        for i, reason in problems:
            failures.append(f"{technologies[i]}/{key}: {reason} in {start}-{end}")
        if problems or not present:
            continue
        x0, x1 = levels[:-1][:, present], levels[1:][:, present]
        q, means = _path_means(x0, x1, dt)
        growth = (q - 1.0) / dt
        design = np.column_stack([np.ones(len(x0)), means])
        if len(x0) < design.shape[1]:
            failures.append(f"{key}: {len(x0)} transitions for {design.shape[1]} regressors in {start}-{end}")
            continue
        regressed = True
        for column, i in enumerate(present):
            beta, fit_r2, fit_var, se, condition, problem = _ols(growth[:, column], design)
            conditions[i, d] = condition
            if problem is not None:
                failures.append(f"{technologies[i]}/{key}: {problem} in {start}-{end}")
                logger.info("window %d-%d %s/%s: %s", start, end, technologies[i], key, problem)
                regressed = False
                continue
            a[i, d] = beta[0]
            r2[i, d], variance[i, d] = fit_r2, fit_var
            se_a[i, d] = se[0]
            for k, j in enumerate(present):
                if j == i:
                    b[i, d], se_b[i, d] = -beta[1 + k], se[1 + k]
                else:
                    c[i, j, d], se_c[i, j, d] = -beta[1 + k], se[1 + k]
        if method is CalibrationMethod.REFINE and regressed:
            try:
                ra, rb, rc, sa, sb, sc, rr2, rvar, rcond = _refine(
                    levels, present, a[:, d], b[:, d], c[:, :, d], dt, share_index == d
                )
            except (ValueError, np.linalg.LinAlgError) as e:
                logger.warning("refinement of %s in %d-%d failed (%s); keeping the regression", key, start, end, e)
                continue
            a[:, d], b[:, d], c[:, :, d] = ra, rb, rc
            se_a[present, d], se_b[present, d] = sa[present], sb[present]
            se_c[np.ix_(present, present, [d])] = sc[np.ix_(present, present)][:, :, None]
            r2[present, d] = rr2
            variance[present, d] = rvar
            conditions[present, d] = rcond

    block = None if failures else ParameterBlock(technologies, keys, a, b, c)
    return WindowFit(start, end, technologies, keys, block, r2, variance, se_a, se_b, se_c, conditions, tuple(failures))


def fit_all(
    series: ObservedSeries,
    windows: WindowSpec = WindowSpec(),
    dt: float = 0.125,
    method: CalibrationMethod = CalibrationMethod.OLS,
    share_index: Optional[int] = None,
) -> FitResult:
    """
    Fit every window of the span, then fill failed windows from the last good one before them (or the first good one
    when the failures lead).  See fit_window for what each method guarantees.
    """
    spans = windows.windows(int(series.years[0]), int(series.years[-1]))
    if not spans:
        raise errors.InsufficientDataError(
            f"Observed data spans {series.years[0]}-{series.years[-1]}, too short for {windows.length}-year windows."
        )
    fits = [fit_window(series, span, dt, method, share_index) for span in spans]
    good = [k for k, fit in enumerate(fits) if fit.ok]
    if not good:
        raise errors.CalibrationError(f"None of the {len(fits)} calibration windows could be fitted.")

    filled = []
    source = None
    for k, fit in enumerate(fits):
        if fit.ok:
            source = fit
            filled.append(fit)
            continue
        donor = source if source is not None else fits[good[0]]
        logger.warning(
            "window %d-%d could not be fitted (%s); using the parameters of %d-%d",
            fit.start,
            fit.end,
            "; ".join(fit.failures),
            donor.start,
            donor.end,
        )
        filled.append(replace(fit, block=donor.block, filled_from=donor.start))
    logger.info("fitted %d of %d windows with %s", len(good), len(fits), CalibrationMethod(method).value)
    return FitResult(tuple(filled), CalibrationMethod(method))


def goodness_of_fit(
    fit: FitResult, series: ObservedSeries, dt: float = 0.125, share_index: Optional[int] = None
) -> pd.DataFrame:
    """Per window and sub-dimension: the mean regression R2 and the RMSE of a re-simulation from the observed start."""
    rows = []
    for window in fit:
        observed = series.window(window.start, window.end)
        rmse = np.full(len(series.sub_dimensions), np.nan)
        if window.block is not None and not np.isnan(observed[0]).any():
            config = SimulationConfig(window.start, window.end, dt, share_index=share_index)
            try:
                trajectory = simulate(
                    config,
                    ParameterTimeline.constant(window.block, window.start),
                    SystemState(observed[0], window.start),
                )
                simulated = trajectory.annual()[1]
                with np.errstate(invalid="ignore"):
                    squared = (simulated - observed) ** 2
                rmse = np.sqrt(np.nanmean(squared.reshape(-1, squared.shape[-1]), axis=0))
            except errors.NumericalBlowUpError as e:
                logger.warning("re-simulating window %d-%d blew up: %s", window.start, window.end, e.message)
                rmse = np.full(len(series.sub_dimensions), np.inf)
        for d, key in enumerate(series.sub_dimensions):
            column = window.r2[:, d]
            rows.append(
                {
                    "window_start": window.start,
                    "window_end": window.end,
                    "sub_dimension": key,
                    "r2": float(np.nanmean(column)) if np.isfinite(column).any() else np.nan,
                    "rmse": float(rmse[d]),
                    "filled": window.filled,
                }
            )
    return pd.DataFrame(rows, columns=["window_start", "window_end", "sub_dimension", "r2", "rmse", "filled"])
