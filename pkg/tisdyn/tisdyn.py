import logging
import sys

import click

from tisdyn import pipeline
from tisdyn.config import load_config
from tisdyn.errors import TisdynError
from tisdyn.scenarios import Variant

logger = logging.getLogger(__name__)

CONFIG_OPTION = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False, readable=True), help="Run configuration."
)


@click.group()
@click.option("--debug/--no-debug", default=False)
@click.option("--verbose/--quiet", default=False)
@click.pass_context
def tisdyn(ctx, debug, verbose):
    ctx.ensure_object(dict)
    ctx.obj["DEBUG"] = debug
    ctx.obj["VERBOSE"] = verbose
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def _fail(stage: str, e: Exception):
    if isinstance(e, TisdynError):
        print(f"Error while {stage}: {e.message}", file=sys.stderr)
        for problem in getattr(e, "errors", [])[1:]:
            print(f"    {problem}", file=sys.stderr)
        sys.exit(e.exit_code)
    print(f"Error while {stage}: {e}", file=sys.stderr)
    sys.exit(4)


@tisdyn.command()
@CONFIG_OPTION
@click.option("--scenario", type=click.Choice([v.value for v in Variant]), help="Overrides scenario.variant.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, writable=True), help="Run directory.")
@click.pass_context
def simulate(ctx, config_path, scenario, out_dir):
    stage = "loading the configuration"
    try:
        config = load_config(config_path)
        stage = f"simulating {scenario or config.scenario.variant.value}"
        run = pipeline.run_pipeline(ctx, config, scenario, out_dir, config_path)
    except (TisdynError, OSError) as e:
        _fail(stage, e)
    if ctx.obj["VERBOSE"]:
        click.echo(f"{run.spec.name}: {run.report.total_cumulative():.6g} Mt cumulative")


@tisdyn.command()
@CONFIG_OPTION
@click.option("--data", type=click.Path(exists=True, dir_okay=False, readable=True), help="Observed series CSV.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, writable=True))
@click.pass_context
def calibrate(ctx, config_path, data, out_dir):
    stage = "loading the configuration"
    try:
        config = load_config(config_path)
        stage = f'calibrating against "{data or config.calibration.data}"'
        fit = pipeline.run_calibration(ctx, config, data, out_dir, config_path)
    except (TisdynError, OSError) as e:
        _fail(stage, e)
    if ctx.obj["VERBOSE"]:
        filled = sum(1 for window in fit if window.filled)
        click.echo(f"fitted {len(fit) - filled} of {len(fit)} windows")


@tisdyn.command()
@CONFIG_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False, writable=True))
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Scenarios run at once.")
@click.pass_context
def scenarios(ctx, config_path, out_dir, workers):
    stage = "loading the configuration"
    try:
        config = load_config(config_path)
        stage = "running the scenarios"
        runs = pipeline.run_scenarios(ctx, config, out_dir, workers, config_path)
    except (TisdynError, OSError) as e:
        _fail(stage, e)
    if ctx.obj["VERBOSE"]:
        for run in runs:
            click.echo(f"{run.spec.name:<27} {run.report.total_cumulative():.6g} Mt")


@tisdyn.command()
@CONFIG_OPTION
@click.option("--params", required=True, type=click.Path(exists=True, dir_okay=False, readable=True))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, writable=True))
@click.pass_context
def modes(ctx, config_path, params, out_dir):
    stage = "loading the configuration"
    try:
        config = load_config(config_path)
        stage = f'classifying "{params}"'
        series = pipeline.modes_from_parameters(ctx, config, params, out_dir)
    except (TisdynError, OSError) as e:
        _fail(stage, e)
    if ctx.obj["VERBOSE"]:
        click.echo(f"{len(series)} labels")


@tisdyn.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.pass_context
def emissions(ctx, run_dir):
    try:
        report = pipeline.emissions_from_run(ctx, run_dir)
    except (TisdynError, OSError) as e:
        _fail(f'recomputing the emissions of "{run_dir}"', e)
    click.echo(f"{report.scenario}: {report.total_cumulative():.6g} Mt cumulative by {report.annual.index[-1]}")


@tisdyn.command(name="demo-data")
@CONFIG_OPTION
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, writable=True))
@click.option("--end-year", type=int, default=2020, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0), default=0.0, show_default=True, help="Relative noise sd.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.pass_context
def demo_data(ctx, config_path, out_path, end_year, noise, seed):
    stage = "loading the configuration"
    try:
        config = load_config(config_path)
        stage = "generating demo data"
        pipeline.demo_data(ctx, config, out_path, end_year, noise, seed)
    except (TisdynError, OSError) as e:
        _fail(stage, e)


if __name__ == "__main__":
    tisdyn(obj={})
