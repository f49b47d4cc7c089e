"""
Coupled Lotka-Volterra dynamics over every (technology, sub-dimension) pair, integrated with fixed-step Euler.

For technology i and sub-dimension d:

    dX[i,d]/dt = X[i,d] * (a[i,d] - b[i,d] * X[i,d] - sum over j != i of c[i,j,d] * X[j,d])

The interaction term is subtracted, so a positive c[i,j,d] means j harms i on d and a negative one means j benefits
i.  Sub-dimensions only interact with the same sub-dimension of other technologies.  Levels that Euler drives below
zero are clamped to zero, and the market-share column is renormalised over the active technologies after each step.
"""

import bisect
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tisdyn import errors
from tisdyn.catalog import Technology

logger = logging.getLogger(__name__)


def _first_bad_index(array: np.ndarray) -> Tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(~np.isfinite(array))[0])


@dataclass(frozen=True, eq=False)
class ParameterBlock:
    technologies: Tuple[Technology, ...]
    sub_dimensions: Tuple[str, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    active: Optional[np.ndarray] = None

    def __post_init__(self):
        n, m = len(self.technologies), len(self.sub_dimensions)
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        c = np.array(self.c, dtype=float)
        active = np.ones(n, dtype=bool) if self.active is None else np.array(self.active, dtype=bool)
        if a.shape != (n, m) or b.shape != (n, m) or c.shape != (n, n, m) or active.shape != (n,):
            raise errors.ConfigValidationError(
                f"Parameter shapes a{a.shape}, b{b.shape}, c{c.shape} do not match "
                f"{n} technologies and {m} sub-dimensions."
            )
        c[np.arange(n), np.arange(n), :] = 0.0
        for name, values in (("a", a), ("b", b)):
            if not np.isfinite(values).all():
                i, d = _first_bad_index(values)
                raise errors.NonFiniteValueError(
                    f"Parameter {name} for {self.technologies[i]} / {self.sub_dimensions[d]} is not finite."
                )
        if not np.isfinite(c).all():
            i, j, d = _first_bad_index(c)
            raise errors.NonFiniteValueError(
                f"Interaction c for {self.technologies[i]} <- {self.technologies[j]} / {self.sub_dimensions[d]} "
                "is not finite."
            )
        for values in (a, b, c, active):
            values.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "active", active)

    @property
    def n_technologies(self) -> int:
        return len(self.technologies)

    @property
    def n_sub_dimensions(self) -> int:
        return len(self.sub_dimensions)

    def replace(self, a=None, b=None, c=None, active=None) -> "ParameterBlock":
        return ParameterBlock(
            self.technologies,
            self.sub_dimensions,
            self.a if a is None else a,
            self.b if b is None else b,
            self.c if c is None else c,
            self.active if active is None else active,
        )

    def without(self, index: int) -> "ParameterBlock":
        """The same block with one technology taken out of the model entirely."""
        keep = [i for i in range(self.n_technologies) if i != index]
        return ParameterBlock(
            tuple(self.technologies[i] for i in keep),
            self.sub_dimensions,
            self.a[keep],
            self.b[keep],
            self.c[np.ix_(keep, keep)],
            self.active[keep],
        )


@dataclass(frozen=True)
class TimelinePiece:
    start: float
    block: ParameterBlock
    filled: bool = False


@dataclass(frozen=True)
class ParameterTimeline:
    """Piecewise-constant parameters: each piece applies from its start until the next piece starts."""

    pieces: Tuple[TimelinePiece, ...]

    def __post_init__(self):
        if not self.pieces:
            raise errors.ConfigValidationError("A parameter timeline needs at least one block.")
        pieces = tuple(sorted(self.pieces, key=lambda p: p.start))
        starts = [p.start for p in pieces]
        if len(set(starts)) != len(starts):
            raise errors.ConfigValidationError("Parameter blocks must start in different years.")
        first = pieces[0].block
        for piece in pieces[1:]:
            block = piece.block
            if block.technologies != first.technologies or block.sub_dimensions != first.sub_dimensions:
                raise errors.ConfigValidationError(
                    f"The block starting {piece.start} covers different technologies or sub-dimensions."
                )
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "_starts", starts)

    @classmethod
    def constant(cls, block: ParameterBlock, start: float = 0.0) -> "ParameterTimeline":
        return cls((TimelinePiece(start, block),))

    @property
    def starts(self) -> List[float]:
        return list(self._starts)

    @property
    def technologies(self) -> Tuple[Technology, ...]:
        return self.pieces[0].block.technologies

    @property
    def sub_dimensions(self) -> Tuple[str, ...]:
        return self.pieces[0].block.sub_dimensions

    def piece_at(self, t: float) -> TimelinePiece:
        index = bisect.bisect_right(self._starts, t) - 1
        return self.pieces[max(index, 0)]

    def block_at(self, t: float) -> ParameterBlock:
        return self.piece_at(t).block

    def windows(self, t_end: float) -> List[Tuple[float, float]]:
        """The (start, end) spans the pieces cover up to t_end."""
        ends = self._starts[1:] + [t_end]
        return [(start, end) for start, end in zip(self._starts, ends) if start < t_end]

    def map(self, transform: Callable[[ParameterBlock], ParameterBlock]) -> "ParameterTimeline":
        return ParameterTimeline(tuple(TimelinePiece(p.start, transform(p.block), p.filled) for p in self.pieces))

    def __iter__(self):
        return iter(self.pieces)

    def __len__(self):
        return len(self.pieces)


@dataclass(frozen=True, eq=False)
class SystemState:
    levels: np.ndarray
    t: float


@dataclass(frozen=True)
class ParameterModifier:
    a_scale: np.ndarray
    b_scale: Optional[np.ndarray] = None


# (step index, time, annual years so far, annual levels so far) -> modifier for this step, if any
ScenarioHook = Callable[[int, float, Sequence[int], Sequence[np.ndarray]], Optional[ParameterModifier]]


def _is_whole(value: float) -> bool:
    return abs(value - round(value)) < 1e-9


@dataclass(frozen=True)
class SimulationConfig:
    t_start: float = 1985
    t_end: float = 2070
    dt: float = 0.125
    renormalize_shares: bool = True
    blow_up_bound: float = 1e12
    share_index: Optional[int] = None

    def __post_init__(self):
        problems = []
        if not self.t_start < self.t_end:
            problems.append(f"t_start ({self.t_start}) must be before t_end ({self.t_end}).")
        if not _is_whole(self.t_start) or not _is_whole(self.t_end):
            problems.append("t_start and t_end must be whole years.")
        if not self.dt > 0:
            problems.append(f"dt ({self.dt}) must be positive.")
        else:
            if not _is_whole((self.t_end - self.t_start) / self.dt):
                problems.append(
                    f"(t_end - t_start) / dt = {(self.t_end - self.t_start) / self.dt:g} must be a whole number of "
                    "steps."
                )
            if not _is_whole(1.0 / self.dt):
                problems.append(f"1 / dt = {1.0 / self.dt:g} must be a whole number of steps per year.")
        if not self.blow_up_bound > 0:
            problems.append("blow_up_bound must be positive.")
        if problems:
            raise errors.ConfigValidationError(problems[0], problems)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def steps_per_year(self) -> int:
        return int(round(1.0 / self.dt))


@dataclass(frozen=True, eq=False)
class Trajectory:
    technologies: Tuple[Technology, ...]
    sub_dimensions: Tuple[str, ...]
    times: np.ndarray
    levels: np.ndarray
    firings: Tuple[int, ...] = field(default=())

    def state(self, step: int) -> SystemState:
        return SystemState(self.levels[step], float(self.times[step]))

    def annual(self) -> Tuple[np.ndarray, np.ndarray]:
        """Integer years and the states sampled exactly at them."""
        whole = np.abs(self.times - np.round(self.times)) < 1e-9
        return np.round(self.times[whole]).astype(int), self.levels[whole]

    def annual_series(self, technology: int, sub_dimension: str) -> pd.Series:
        years, levels = self.annual()
        d = self.sub_dimensions.index(sub_dimension)
        return pd.Series(levels[:, technology, d], index=years, name=sub_dimension)

    def to_frame(self) -> pd.DataFrame:
        years, levels = self.annual()
        n_tech, n_sub = len(self.technologies), len(self.sub_dimensions)
        return pd.DataFrame(
            {
                "year": np.repeat(years, n_tech * n_sub),
                "technology": np.tile(np.repeat([str(t) for t in self.technologies], n_sub), len(years)),
                "sub_dimension": np.tile(list(self.sub_dimensions), len(years) * n_tech),
                "level": levels.reshape(-1),
            }
        )


def _validated_levels(state: SystemState, params: ParameterBlock) -> np.ndarray:
    levels = np.asarray(state.levels, dtype=float)
    if levels.shape != params.a.shape:
        raise errors.ConfigValidationError(f"State shape {levels.shape} does not match parameters {params.a.shape}.")
    if not np.isfinite(levels).all():
        i, d = _first_bad_index(levels)
        raise errors.NonFiniteValueError(
            f"State level for {params.technologies[i]} / {params.sub_dimensions[d]} is not finite."
        )
    return levels


def derivative(state: SystemState, params: ParameterBlock) -> np.ndarray:
    levels = _validated_levels(state, params)
    rates = levels * (params.a - params.b * levels - np.einsum("ijd,jd->id", params.c, levels))
    rates[~params.active] = 0.0
    return rates


@dataclass(frozen=True, eq=False)
class _Stepper:
    """
    One block laid out for the Euler update, runs first and technologies last:

        x <- x * (factor - coupling @ x)

    with factor = 1 + dt*a and coupling = dt*c carrying dt*b on its diagonal.  Inactive technologies get factor 1 and
    a zero coupling row, so their levels stay where they are.
    """

    factor: np.ndarray  # (runs, sub-dimensions, technologies)
    coupling: np.ndarray  # (runs, sub-dimensions, technologies, technologies)
    members: Optional[np.ndarray]  # active technologies, None when all are


def _stepper(a: np.ndarray, b: np.ndarray, c: np.ndarray, active: np.ndarray, dt: float) -> _Stepper:
    n = a.shape[1]
    coupling = np.array(c, dtype=float)
    diagonal = np.arange(n)
    coupling[:, diagonal, diagonal, :] = b
    coupling[:, ~active] = 0.0
    rates = np.where(active[None, :, None], a, 0.0)
    return _Stepper(
        np.ascontiguousarray(np.transpose(1.0 + dt * rates, (0, 2, 1))),
        np.ascontiguousarray(np.transpose(dt * coupling, (0, 3, 1, 2))),
        None if active.all() else np.flatnonzero(active),
    )


def _block_stepper(block: ParameterBlock, dt: float, modifier: Optional[ParameterModifier] = None) -> _Stepper:
    a, b = block.a, block.b
    if modifier is not None:
        a = a * modifier.a_scale
        if modifier.b_scale is not None:
            b = b * modifier.b_scale
    return _stepper(a[None], b[None], block.c[None], block.active, dt)


def _renormalize(x: np.ndarray, share_index: int, members: Optional[np.ndarray] = None):
    """Rescale the share column of every run in x (runs, sub-dimensions, technologies) to sum to one."""
    if members is None:
        shares = x[:, share_index, :]
    else:
        shares = x[:, share_index][:, members]
    if len(x) == 1:
        total = shares.sum()
        if total > 0:
            shares *= 1.0 / total
    else:
        total = shares.sum(axis=-1, keepdims=True)
        np.divide(shares, total, out=shares, where=total > 0)
    if members is not None:
        x[:, share_index, members] = shares


def _advance(x: np.ndarray, out: np.ndarray, stepper: _Stepper, pressure: np.ndarray, share_index: Optional[int]):
    if len(x) == 1:
        np.matmul(stepper.coupling, x[..., None], out=pressure)
        factor = pressure[..., 0]
        np.subtract(stepper.factor, factor, out=factor)
    else:
        # many runs: accumulate one affecting technology at a time
        factor = pressure[..., 0]
        np.copyto(factor, stepper.factor)
        term = out
        for j in range(x.shape[-1]):
            np.multiply(stepper.coupling[..., j], x[..., j : j + 1], out=term)
            factor -= term
    np.multiply(x, factor, out=out)
    np.maximum(out, 0.0, out=out)
    if share_index is not None:
        _renormalize(out, share_index, stepper.members)


def step_euler(
    state: SystemState,
    params: ParameterBlock,
    dt: float,
    renormalize: bool = True,
    share_index: Optional[int] = None,
) -> SystemState:
    if not dt > 0:
        raise errors.ConfigValidationError(f"dt ({dt}) must be positive.")
    x = _validated_levels(state, params).T[None]
    out = np.empty(x.shape)
    _advance(x, out, _block_stepper(params, dt), np.empty(x.shape + (1,)), share_index if renormalize else None)
    return SystemState(np.ascontiguousarray(out[0].T), state.t + dt)


def _check_bounds(span: np.ndarray, first_step: int, bound: float, block: ParameterBlock):
    """span holds consecutive steps of one run, laid out (steps, 1, sub-dimensions, technologies)."""
    if span.max() <= bound:
        return
    k, _, d, i = (int(v) for v in np.argwhere(~(span <= bound))[0])
    step = first_step + k
    component = f"{block.technologies[i]}/{block.sub_dimensions[d]}"
    raise errors.NumericalBlowUpError(
        f"Level of {component} left the bound {bound:g} at step {step} (value {span[k, 0, d, i]!r}).", step, component
    )


def _initial_levels(config: SimulationConfig, first: ParameterBlock, init: SystemState) -> np.ndarray:
    if abs(init.t - config.t_start) > 1e-9:
        raise errors.ConfigValidationError(f"The initial state is at {init.t}, not at t_start {config.t_start}.")
    x = np.array(init.levels, dtype=float)
    if x.shape != first.a.shape:
        raise errors.ConfigValidationError(f"Initial state shape {x.shape} does not match parameters {first.a.shape}.")
    if not np.isfinite(x).all() or (x < 0).any():
        i, d = (int(k) for k in np.argwhere(~np.isfinite(x) | (np.nan_to_num(x) < 0))[0])
        raise errors.NonFiniteValueError(
            f"Initial level for {first.technologies[i]} / {first.sub_dimensions[d]} must be finite and >= 0."
        )
    x[~first.active] = 0.0
    if config.renormalize_shares and config.share_index is not None:
        members = None if first.active.all() else np.flatnonzero(first.active)
        _renormalize(x.T[None], config.share_index, members)
    return x


def _piece_of_step(timeline: ParameterTimeline, times: np.ndarray) -> List[int]:
    return (np.searchsorted(timeline.starts, times[:-1], side="right") - 1).clip(0).tolist()


def simulate(
    config: SimulationConfig,
    timeline: ParameterTimeline,
    init: SystemState,
    hook: Optional[ScenarioHook] = None,
) -> Trajectory:
    first = timeline.block_at(config.t_start)
    x = _initial_levels(config, first, init)
    share = config.share_index if config.renormalize_shares else None

    n_steps, per_year = config.n_steps, config.steps_per_year
    times = config.t_start + np.arange(n_steps + 1) * config.dt
    piece_of_step = _piece_of_step(timeline, times)
    steppers = [_block_stepper(piece.block, config.dt) for piece in timeline]
    # internal layout (steps, run, sub-dimension, technology)
    levels = np.empty((n_steps + 1, 1) + x.T.shape)
    levels[0, 0] = x.T
    pressure = np.empty(levels.shape[1:] + (1,))
    annual_years: List[int] = []
    annual_levels: List[np.ndarray] = []
    checked = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            piece = piece_of_step[k]
            stepper = steppers[piece]
            if hook is not None:
                t = float(times[k])
                if k % per_year == 0:
                    annual_years.append(int(round(t)))
                    annual_levels.append(levels[k, 0].T)
                modifier = hook(k, t, annual_years, annual_levels)
                if modifier is not None:
                    stepper = _block_stepper(timeline.pieces[piece].block, config.dt, modifier)
            _advance(levels[k], levels[k + 1], stepper, pressure, share)
            if (k + 1) % per_year == 0 or k + 1 == n_steps:
                _check_bounds(levels[checked + 1 : k + 2], checked + 1, config.blow_up_bound, first)
                checked = k + 1

    firings = tuple(getattr(hook, "firings", ()))
    logger.debug("simulated %d steps from %g to %g", n_steps, config.t_start, config.t_end)
    levels = np.ascontiguousarray(levels[:, 0].transpose(0, 2, 1))
    return Trajectory(first.technologies, first.sub_dimensions, times, levels, firings)


@dataclass(frozen=True, eq=False)
class ParameterSweep:
    """
    Many parameter sets sharing one timeline's pieces, technologies and sub-dimensions, stacked on a run axis:
    a and b are (pieces, runs, technologies, sub-dimensions), c is (pieces, runs, technologies, technologies,
    sub-dimensions).  Activity follows the timeline.
    """

    timeline: ParameterTimeline
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        pieces = len(self.timeline)
        n, m = len(self.timeline.technologies), len(self.timeline.sub_dimensions)
        a, b, c = (np.asarray(values, dtype=float) for values in (self.a, self.b, self.c))
        runs = a.shape[1] if a.ndim == 4 else 0
        if runs < 1 or a.shape != (pieces, runs, n, m) or b.shape != a.shape or c.shape != (pieces, runs, n, n, m):
            raise errors.ConfigValidationError(
                f"Sweep shapes a{a.shape}, b{b.shape}, c{c.shape} do not match {pieces} pieces of {n} technologies "
                f"and {m} sub-dimensions."
            )
        if not (np.isfinite(a).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise errors.NonFiniteValueError("Sweep parameters must be finite.")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_runs(self) -> int:
        return self.a.shape[1]

    @classmethod
    def perturbed(
        cls, timeline: ParameterTimeline, relative_sd: float, n_runs: int, seed: int = 0
    ) -> "ParameterSweep":
        """Every a, b and c multiplied by an independent seeded 1 + relative_sd * N(0, 1) draw per run."""
        if relative_sd < 0:
            raise errors.ConfigValidationError(f"relative_sd ({relative_sd}) must not be negative.")
        if n_runs < 1:
            raise errors.ConfigValidationError(f"A sweep needs at least one run, not {n_runs}.")
        rng = np.random.default_rng(seed)

        def draw(values: np.ndarray) -> np.ndarray:
            return values * (1.0 + relative_sd * rng.standard_normal((n_runs,) + values.shape))

        blocks = [piece.block for piece in timeline]
        a = np.stack([draw(block.a) for block in blocks])
        b = np.stack([draw(block.b) for block in blocks])
        c = np.stack([draw(block.c) for block in blocks])
        return cls(timeline, a, b, c)


@dataclass(frozen=True, eq=False)
class SweepResult:
    technologies: Tuple[Technology, ...]
    sub_dimensions: Tuple[str, ...]
    years: np.ndarray
    levels: np.ndarray  # (years, runs, technologies, sub-dimensions)
    diverged: np.ndarray  # step at which each run left the bound, -1 if it never did

    def trajectory(self, run: int) -> Trajectory:
        """The annual trajectory of one run."""
        return Trajectory(self.technologies, self.sub_dimensions, self.years.astype(float), self.levels[:, run])


def simulate_sweep(config: SimulationConfig, sweep: ParameterSweep, init: SystemState) -> SweepResult:
    """
    Every run of a sweep at once from one initial state, keeping the annual states only.

    A run that leaves the blow-up bound does not abort the sweep: it is stopped, its step is recorded in `diverged`
    and its levels from that year on are NaN.
    """
    timeline = sweep.timeline
    first = timeline.block_at(config.t_start)
    x = _initial_levels(config, first, init)
    share = config.share_index if config.renormalize_shares else None
    runs = sweep.n_runs

    n_steps, per_year = config.n_steps, config.steps_per_year
    times = config.t_start + np.arange(n_steps + 1) * config.dt
    piece_of_step = _piece_of_step(timeline, times)
    steppers = [
        _stepper(sweep.a[p], sweep.b[p], sweep.c[p], piece.block.active, config.dt) for p, piece in enumerate(timeline)
    ]
    years = np.round(times[::per_year]).astype(int)
    annual = np.empty((len(years), runs) + x.T.shape)
    current = np.repeat(x.T[None], runs, axis=0)
    following = np.empty_like(current)
    pressure = np.empty(current.shape + (1,))
    annual[0] = current
    diverged = np.full(runs, -1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            _advance(current, following, steppers[piece_of_step[k]], pressure, share)
            bad = ~(following.reshape(runs, -1).max(axis=1) <= config.blow_up_bound)
            if bad.any():
                diverged[bad] = k + 1
                following[bad] = 0.0
            current, following = following, current
            if (k + 1) % per_year == 0:
                annual[(k + 1) // per_year] = current

    for run in np.flatnonzero(diverged >= 0):
        annual[-(-diverged[run] // per_year) :, run] = np.nan
    if (diverged >= 0).any():
        logger.warning("%d of %d sweep runs left the bound %g", int((diverged >= 0).sum()), runs, config.blow_up_bound)
    logger.debug("swept %d runs over %d steps", runs, n_steps)
    levels = np.ascontiguousarray(annual.transpose(0, 1, 3, 2))
    return SweepResult(first.technologies, first.sub_dimensions, years, levels, diverged)
