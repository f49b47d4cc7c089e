"""
Runs: load the baseline parameters, apply a scenario, simulate, classify, account for emissions and write it all out.

Every run directory ends with a manifest.json recording the configuration, the digests of what was read and written,
and how long each stage took.  A run that fails removes the outputs it had written and leaves a manifest naming the
failing stage.
"""

import concurrent.futures
import datetime
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tisdyn import __version__, errors
from tisdyn.calibration import (
    FitResult,
    ObservedSeries,
    add_noise,
    fit_all,
    goodness_of_fit,
    parameters_frame,
    timeline_from_frame,
)
from tisdyn.catalog import DimensionCatalog
from tisdyn.config import RunConfig, config_snapshot, validate_config
from tisdyn.csv_writer import (
    PLOT_FILES,
    emit_plot_data,
    file_digest,
    read_csv,
    remove_files,
    write_csv_files,
    write_json,
)
from tisdyn.demo import demo_initial_state, demo_timeline
from tisdyn.dynamics import ParameterTimeline, SimulationConfig, SystemState, Trajectory, simulate
from tisdyn.emissions import EmissionReport, emissions, stock_from_sales
from tisdyn.modes import ModeSeries, mode_series, side_mode_series
from tisdyn.scenarios import ScenarioSetup, ScenarioSpec, Variant, apply_scenario, scenario_drivers
from tisdyn.tis_model import MarketSizeSeries, behavior_series, sales_from_share

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RUN_FILES = ("trajectory.csv", "parameters.csv", "modes.csv", "behavior.csv", "emissions.csv")
CALIBRATION_FILES = ("parameters.csv", "goodness.csv", "modes.csv", "behavior.csv")
COMPARISON = "comparison.csv"
COMPARISON_COLUMNS = ["scenario", "year", "technology", "share", "sales", "cumulative_ghg"]


class StageClock:
    """Times named stages and remembers which one was running when something went wrong."""

    def __init__(self):
        self.timings: Dict[str, float] = {}
        self.current: Optional[str] = None
        self.started = datetime.datetime.now(datetime.timezone.utc)

    @contextmanager
    def stage(self, name: str):
        self.current = name
        begin = time.perf_counter()
        logger.info("%s ...", name)
        yield
        self.timings[name] = round(time.perf_counter() - begin, 6)
        logger.info("%s done in %.3f s", name, self.timings[name])
        self.current = None


@dataclass(frozen=True)
class BaselineInputs:
    timeline: ParameterTimeline
    init: SystemState
    fit: Optional[FitResult] = None
    read: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class ScenarioRun:
    spec: ScenarioSpec
    setup: ScenarioSetup
    trajectory: Trajectory
    sales: pd.DataFrame
    report: EmissionReport
    modes: ModeSeries
    behavior: pd.DataFrame
    parameters: pd.DataFrame = field(repr=False)


def _initial_state(series: ObservedSeries, catalog: DimensionCatalog, t_start: int, what: str) -> SystemState:
    missing = [key for key in catalog.keys() if key not in series.sub_dimensions]
    if missing:
        raise errors.InsufficientDataError(f"The {what} has no levels for {', '.join(missing)}.")
    order = [series.sub_dimensions.index(key) for key in catalog.keys()]
    levels = series.window(t_start, t_start)[0][:, order]
    if np.isnan(levels).any():
        i, d = (int(k) for k in np.argwhere(np.isnan(levels))[0])
        raise errors.InsufficientDataError(
            f"The {what} has no level for {series.technologies[i]} / {catalog.keys()[d]} in {t_start}."
        )
    return SystemState(levels, float(t_start))


def baseline_inputs(config: RunConfig) -> BaselineInputs:
    """The baseline parameter timeline and initial state the configured source provides."""
    technologies = config.technology_tuple()
    catalog = config.dimension_catalog()
    t_start = config.simulation.t_start
    source = config.parameters.source

    if source == "calibrate":
        data = config.calibration.data
        series = ObservedSeries.from_csv(data, technologies, catalog)
        fit = fit_all(
            series,
            config.window_spec(),
            config.simulation.dt,
            config.calibration.method,
            catalog.share_index,
        )
        timeline = fit.to_timeline()
        if timeline.sub_dimensions != catalog.keys():
            raise errors.InsufficientDataError("The observed data must cover every sub-dimension of the catalog.")
        return BaselineInputs(timeline, _initial_state(series, catalog, t_start, "observed data"), fit, (data,))

    read = []
    if source == "file":
        path = config.parameters.path
        timeline = timeline_from_frame(read_csv(path, "parameter table"), technologies)
        if set(timeline.sub_dimensions) != set(catalog.keys()):
            absent = sorted(set(catalog.keys()) - set(timeline.sub_dimensions))
            extra = sorted(set(timeline.sub_dimensions) - set(catalog.keys()))
            raise errors.ConfigValidationError(
                f'Parameter table "{path}" does not match the catalog (missing: {absent}, unknown: {extra}).'
            )
        if timeline.sub_dimensions != catalog.keys():
            raise errors.ConfigValidationError(f'Parameter table "{path}" must list sub-dimensions in catalog order.')
        read.append(path)
    else:
        timeline = demo_timeline(technologies, catalog)

    if config.parameters.initial_state:
        path = config.parameters.initial_state
        series = ObservedSeries.from_frame(read_csv(path, "initial state"), technologies, catalog)
        init = _initial_state(series, catalog, t_start, "initial state")
        read.append(path)
    else:
        init = demo_initial_state(catalog, t_start)
    return BaselineInputs(timeline, init, None, tuple(read))


def run_scenario(config: RunConfig, variant: Variant, inputs: BaselineInputs) -> ScenarioRun:
    spec = config.scenario_spec(variant)
    sim = config.simulation_config()
    catalog = config.dimension_catalog()
    sides = config.side_grouping()
    policy = config.epsilon_policy()
    technologies = config.technology_tuple()

    setup = apply_scenario(inputs.timeline, config.exogenous_drivers(), spec, config.elasticity_map(), sim.share_index)
    trajectory = simulate(sim, setup.timeline, inputs.init, setup.hook())
    if trajectory.firings:
        logger.info("%s: structural decline detected in %s", spec.name, ", ".join(map(str, trajectory.firings)))

    market = setup.market_size(sim.t_start, config.market.base_size, sim.t_end, config.market.gdp_elasticity)
    sales = sales_from_share(trajectory, market, catalog.share_key)
    stocks = stock_from_sales(sales, config.fleet_model().lifetime)
    report = emissions(stocks, config.emission_factors(), technologies, sim.t_start, sim.t_end, spec.name)

    modes = mode_series(setup.timeline, policy, sim.t_end) + side_mode_series(
        trajectory, setup.timeline, sides, policy, config.modes.aggregation
    )
    behavior = behavior_series(setup.timeline, sides, sim.t_end, policy, per_sub_dimension=True)
    r2 = {w.start: w.r2 for w in inputs.fit} if inputs.fit is not None and variant is Variant.BASELINE else None
    return ScenarioRun(spec, setup, trajectory, sales, report, modes, behavior, parameters_frame(setup.timeline, r2))


def run_frames(run: ScenarioRun) -> Dict[str, pd.DataFrame]:
    return dict(
        zip(
            RUN_FILES,
            (
                run.trajectory.to_frame(),
                run.parameters,
                run.modes.to_frame(),
                run.behavior,
                run.report.to_frame(),
            ),
        )
    )


def _with_scenario(frame: pd.DataFrame, scenario: str) -> pd.DataFrame:
    frame = frame.copy()
    frame.insert(0, "scenario", scenario)
    return frame


def plot_frames(runs: Sequence[ScenarioRun], catalog: DimensionCatalog) -> Tuple[pd.DataFrame, ...]:
    """behavior, modes, dimensions and ghg plot tables for a sequence of runs, in run order."""
    dimension_of = {key: catalog.get(key).dimension for key in catalog.keys()}
    behavior, modes, dimensions, ghg = [], [], [], []
    for run in runs:
        name = run.spec.name
        behavior.append(_with_scenario(run.behavior, name))
        modes.append(_with_scenario(run.modes.to_frame(), name))
        levels = _with_scenario(run.trajectory.to_frame(), name)
        levels.insert(3, "dimension", levels["sub_dimension"].map(dimension_of))
        dimensions.append(levels)
        ghg.append(run.report.to_frame())
    return tuple(pd.concat(frames, ignore_index=True) for frames in (behavior, modes, dimensions, ghg))


def comparison_frame(runs: Sequence[ScenarioRun], share_key: str) -> pd.DataFrame:
    frames = []
    for run in runs:
        years, levels = run.trajectory.annual()
        d = run.trajectory.sub_dimensions.index(share_key)
        names = [str(t) for t in run.trajectory.technologies]
        cumulative = run.report.cumulative
        frames.append(
            pd.DataFrame(
                {
                    "scenario": run.spec.name,
                    "year": np.repeat(years, len(names)),
                    "technology": np.tile(names, len(years)),
                    "share": levels[:, :, d].reshape(-1),
                    "sales": run.sales.loc[years, names].to_numpy().reshape(-1),
                    "cumulative_ghg": cumulative.loc[years, names].to_numpy().reshape(-1),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[COMPARISON_COLUMNS]


def _digests(paths: Iterable, base: Optional[Path] = None) -> Dict[str, str]:
    found = {}
    for path in paths:
        path = Path(path)
        name = str(path.relative_to(base)) if base is not None else str(path)
        found[name] = file_digest(path)
    return dict(sorted(found.items()))


def _manifest(
    command: str,
    config: RunConfig,
    clock: StageClock,
    scenario: Optional[str],
    read: Iterable[str] = (),
    written: Optional[Dict[str, str]] = None,
    error: Optional[errors.TisdynError] = None,
    **extra,
) -> Dict:
    document = {
        "artifact": {"name": "tisdyn", "version": __version__},
        "command": command,
        "scenario": scenario,
        "config": config_snapshot(config),
        "inputs": _digests(p for p in read if p and Path(p).is_file()),
        "outputs": written or {},
        "started": clock.started.isoformat(),
        "timings": clock.timings,
        "status": "failed" if error is not None else "ok",
    }
    if error is not None:
        document["failed_stage"] = clock.current
        document["error"] = error.message
    document.update(extra)
    return document


def _fail(ctx, out: Path, names: Iterable[str], document: Dict):
    remove_files(out / name for name in names)
    try:
        write_json(ctx, out / MANIFEST, document)
    except errors.OutputError as e:
        logger.error("could not record the failure: %s", e.message)


def run_pipeline(
    ctx,
    config: RunConfig,
    scenario: Optional[str] = None,
    out_dir=None,
    config_path: Optional[str] = None,
) -> ScenarioRun:
    """One scenario, written to out_dir: trajectory, parameters, modes, behaviour, emissions and plot tables."""
    variant = Variant(scenario) if scenario is not None else config.scenario.variant
    out = Path(out_dir or config.output_dir or "tisdyn-run")
    clock = StageClock()
    read = [config_path]
    try:
        with clock.stage("load parameters"):
            inputs = baseline_inputs(config)
            read += inputs.read
        with clock.stage(f"simulate {variant.value}"):
            run = run_scenario(config, variant, inputs)
        with clock.stage("write outputs"):
            written = write_csv_files(ctx, run_frames(run), out)
            written += emit_plot_data(ctx, out, *plot_frames([run], config.dimension_catalog()))
    except errors.TisdynError as e:
        _fail(ctx, out, RUN_FILES + PLOT_FILES, _manifest("simulate", config, clock, variant.value, read, error=e))
        raise
    write_json(
        ctx,
        out / MANIFEST,
        _manifest(
            "simulate",
            config,
            clock,
            variant.value,
            read,
            _digests(written, out),
            detector_firings=list(run.trajectory.firings),
        ),
    )
    return run


def _scenario_into(
    ctx, config: RunConfig, variant: Variant, inputs: BaselineInputs, out: Path, read: Sequence[Optional[str]]
) -> ScenarioRun:
    """One scenario into out/<variant>, with a manifest of its own so the directory reads back like a simulate run."""
    directory = out / variant.value
    clock = StageClock()
    with clock.stage(f"simulate {variant.value}"):
        run = run_scenario(config, variant, inputs)
    with clock.stage("write outputs"):
        written = write_csv_files(ctx, run_frames(run), directory)
    document = _manifest(
        "scenarios",
        config,
        clock,
        variant.value,
        read,
        _digests(written, directory),
        detector_firings=list(run.trajectory.firings),
    )
    write_json(ctx, directory / MANIFEST, document)
    return run


def run_scenarios(
    ctx,
    config: RunConfig,
    out_dir=None,
    workers: Optional[int] = None,
    config_path: Optional[str] = None,
) -> List[ScenarioRun]:
    """All seven scenarios from one baseline, each into its own directory, plus a comparison table across them."""
    out = Path(out_dir or config.output_dir or "tisdyn-scenarios")
    clock = StageClock()
    read = [config_path]
    names = [COMPARISON, *PLOT_FILES] + [f"{v.value}/{name}" for v in Variant for name in RUN_FILES + (MANIFEST,)]
    try:
        with clock.stage("load parameters"):
            inputs = baseline_inputs(config)
            read += inputs.read
        with clock.stage("simulate scenarios"):
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_scenario_into, ctx, config, v, inputs, out, read) for v in Variant]
                runs = [future.result() for future in futures]
        with clock.stage("compare"):
            catalog = config.dimension_catalog()
            written = write_csv_files(ctx, {COMPARISON: comparison_frame(runs, catalog.share_key)}, out)
            written += emit_plot_data(ctx, out, *plot_frames(runs, catalog))
    except errors.TisdynError as e:
        _fail(ctx, out, names, _manifest("scenarios", config, clock, None, read, error=e))
        raise
    written += [out / v.value / name for v in Variant for name in RUN_FILES]
    for run in runs:
        logger.info("%s: %.6g Mt cumulative", run.spec.name, run.report.total_cumulative())
    write_json(
        ctx,
        out / MANIFEST,
        _manifest(
            "scenarios",
            config,
            clock,
            None,
            read,
            _digests(written, out),
            scenarios=[v.value for v in Variant],
            detector_firings={run.spec.name: list(run.trajectory.firings) for run in runs},
        ),
    )
    return runs


def run_calibration(ctx, config: RunConfig, data=None, out_dir=None, config_path: Optional[str] = None) -> FitResult:
    """Fit the observed data window by window and write the parameters, their fit and the modes they imply."""
    out = Path(out_dir or config.output_dir or "tisdyn-calibration")
    data = str(data or config.calibration.data or "")
    if not data:
        raise errors.ConfigValidationError("Calibration needs observed data (--data or calibration.data).")
    clock = StageClock()
    read = [config_path, data]
    try:
        with clock.stage("read data"):
            series = ObservedSeries.from_csv(data, config.technology_tuple(), config.dimension_catalog())
        with clock.stage("fit windows"):
            share_key = config.dimension_catalog().share_key
            share_index = series.sub_dimensions.index(share_key) if share_key in series.sub_dimensions else None
            fit = fit_all(series, config.window_spec(), config.simulation.dt, config.calibration.method, share_index)
        with clock.stage("classify"):
            timeline = fit.to_timeline()
            t_end = fit.windows[-1].end
            policy = config.epsilon_policy()
            windows = [(w.start, w.end) for w in fit]
            modes = mode_series(timeline, policy, windows=windows)
            frames = {
                "parameters.csv": fit.to_frame(),
                "goodness.csv": goodness_of_fit(fit, series, config.simulation.dt, share_index),
                "modes.csv": modes.to_frame(),
            }
            if set(config.dimension_catalog().keys()) <= set(series.sub_dimensions):
                frames["behavior.csv"] = behavior_series(timeline, config.side_grouping(), t_end, policy)
        with clock.stage("write outputs"):
            written = write_csv_files(ctx, frames, out)
    except errors.TisdynError as e:
        _fail(ctx, out, CALIBRATION_FILES, _manifest("calibrate", config, clock, None, read, error=e))
        raise
    write_json(
        ctx,
        out / MANIFEST,
        _manifest(
            "calibrate",
            config,
            clock,
            None,
            read,
            _digests(written, out),
            method=fit.method.value,
            filled_windows=[w.start for w in fit if w.filled],
        ),
    )
    return fit


def modes_from_parameters(ctx, config: RunConfig, params, out_dir=None) -> ModeSeries:
    """modes.csv and behavior.csv for a parameter table, without simulating."""
    out = Path(out_dir or config.output_dir or ".")
    timeline = timeline_from_frame(read_csv(params, "parameter table"), config.technology_tuple())
    t_end = max(float(config.simulation.t_end), timeline.starts[-1] + 1.0)
    policy = config.epsilon_policy()
    modes = mode_series(timeline, policy, t_end)
    frames = {"modes.csv": modes.to_frame()}
    catalog_keys = set(config.dimension_catalog().keys())
    if catalog_keys <= set(timeline.sub_dimensions):
        sides = config.side_grouping()
        modes = modes + side_mode_series(None, timeline, sides, policy, "coefficients", t_end)
        frames = {
            "modes.csv": modes.to_frame(),
            "behavior.csv": behavior_series(timeline, sides, t_end, policy),
        }
    write_csv_files(ctx, frames, out)
    return modes


def read_run(run_dir) -> Tuple[RunConfig, Variant, Trajectory]:
    """Configuration, scenario and annual trajectory of a simulate run or of one scenario in a scenarios run."""
    run_dir = Path(run_dir)
    try:
        with open(run_dir / MANIFEST) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise errors.ConfigValidationError(f'"{run_dir}" holds no {MANIFEST}; is it a run directory?')
    except (OSError, json.JSONDecodeError) as e:
        raise errors.ConfigValidationError(f'Cannot read "{run_dir / MANIFEST}": {e}')
    if manifest.get("status") != "ok" or manifest.get("scenario") is None:
        raise errors.ConfigValidationError(f'"{run_dir}" is not a finished single-scenario run.')
    config = validate_config(manifest["config"])
    technologies = config.technology_tuple()
    series = ObservedSeries.from_frame(
        read_csv(run_dir / "trajectory.csv", "trajectory"), technologies, config.dimension_catalog()
    )
    trajectory = Trajectory(technologies, series.sub_dimensions, series.years.astype(float), series.levels)
    return config, Variant(manifest["scenario"]), trajectory


def emissions_from_run(ctx, run_dir) -> EmissionReport:
    """Recompute emissions.csv of a run directory from its trajectory and configuration."""
    config, variant, trajectory = read_run(run_dir)
    spec = config.scenario_spec(variant)
    sim: SimulationConfig = config.simulation_config()
    drivers = scenario_drivers(config.exogenous_drivers(), spec)
    gdp = drivers.gdp_growth
    market = MarketSizeSeries.from_growth(
        sim.t_start, config.market.base_size, gdp.baseline, sim.t_end, gdp.multiplier, config.market.gdp_elasticity
    )
    sales = sales_from_share(trajectory, market, config.dimension_catalog().share_key)
    stocks = stock_from_sales(sales, config.fleet_model().lifetime)
    report = emissions(
        stocks, config.emission_factors(), config.technology_tuple(), sim.t_start, sim.t_end, spec.name
    )
    write_csv_files(ctx, {"emissions.csv": report.to_frame()}, run_dir)
    return report


def demo_data(ctx, config: RunConfig, out_path, end_year: int = 2020, noise: float = 0.0, seed: Optional[int] = None):
    """An observed-series CSV cut from the simulated baseline, optionally with multiplicative noise."""
    sim = config.simulation_config()
    if not sim.t_start < end_year <= sim.t_end:
        raise errors.ConfigValidationError(f"--end-year must lie in {sim.t_start + 1}-{sim.t_end}, not {end_year}.")
    if config.parameters.source == "calibrate":
        config = config.model_copy(update={"parameters": config.parameters.model_copy(update={"source": "demo"})})
    inputs = baseline_inputs(config)
    short = SimulationConfig(sim.t_start, end_year, sim.dt, sim.renormalize_shares, sim.blow_up_bound, sim.share_index)
    series = ObservedSeries.from_trajectory(simulate(short, inputs.timeline, inputs.init))
    if noise > 0:
        series = add_noise(series, noise, config.seed if seed is None else seed)
    out_path = Path(out_path)
    write_csv_files(ctx, {out_path.name: series.to_frame()}, out_path.parent)
    return series
