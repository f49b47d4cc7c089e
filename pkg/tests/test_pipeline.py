import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from tisdyn import errors, pipeline
from tisdyn.config import RunConfig, validate_config
from tisdyn.csv_writer import PLOT_FILES
from tisdyn.scenarios import Variant


@pytest.fixture()
def shared_context():
    class MockContext:
        def __init__(self):
            self.obj = dict()

    return MockContext()


def read_golden_record(path: str):
    with open(path + ".golden-record", "r") as f:
        golden_record = f.read()
    return golden_record


def headers(directory: Path, names) -> str:
    lines = []
    for name in sorted(names):
        with open(directory / name) as f:
            lines.append(f"{name}: {f.readline().rstrip()}")
    return "\n".join(lines) + "\n"


def leading_lines(directory: Path, counts) -> str:
    sections = []
    for name, count in counts:
        with open(directory / name) as f:
            sections.append(name + "\n" + "".join(f.readline() for _ in range(count)))
    return "\n".join(sections)


def manifest(directory: Path):
    with open(directory / pipeline.MANIFEST) as f:
        return json.load(f)


def test_run_writes_every_file(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), out_dir=tmp_path)
    names = pipeline.RUN_FILES + PLOT_FILES
    assert headers(tmp_path, names) == read_golden_record("tests/data/run-headers")
    document = manifest(tmp_path)
    assert document["status"] == "ok"
    assert document["scenario"] == "baseline"
    assert sorted(document["outputs"]) == sorted(names)
    assert document["detector_firings"] == []
    assert set(document["timings"]) == {"load parameters", "simulate baseline", "write outputs"}


def test_runs_are_byte_identical(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), out_dir=tmp_path / "first")
    pipeline.run_pipeline(shared_context, RunConfig(), out_dir=tmp_path / "second")
    assert manifest(tmp_path / "first")["outputs"] == manifest(tmp_path / "second")["outputs"]


def test_baseline_starts_from_the_demo_state_and_modes(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), out_dir=tmp_path)
    counts = [("trajectory.csv", 1 + 3 * 16), ("modes.csv", 1 + 3 * 3 * 16)]
    assert leading_lines(tmp_path, counts) == read_golden_record("tests/data/baseline-content")


def test_scenario_runs_are_byte_identical(shared_context, tmp_path):
    pipeline.run_scenarios(shared_context, RunConfig(), tmp_path / "first")
    pipeline.run_scenarios(shared_context, RunConfig(), tmp_path / "second", workers=3)
    first = manifest(tmp_path / "first")["outputs"]
    assert first == manifest(tmp_path / "second")["outputs"]
    assert len(first) == 1 + len(PLOT_FILES) + 7 * len(pipeline.RUN_FILES)


def test_removed_hybrid_has_no_levels(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), "niche-incumbent", tmp_path)
    trajectory = pd.read_csv(tmp_path / "trajectory.csv")
    assert (trajectory[trajectory["technology"] == "HEV"]["level"] == 0).all()
    report = pd.read_csv(tmp_path / "emissions.csv")
    assert (report[report["technology"] == "HEV"]["annual_mt"] == 0).all()
    modes = pd.read_csv(tmp_path / "modes.csv")
    assert set(modes["pair"]) == {"ICEV-BEV"}


def test_scenarios_share_one_comparison(shared_context, tmp_path):
    runs = pipeline.run_scenarios(shared_context, RunConfig(), tmp_path, workers=2)
    assert [run.spec.variant for run in runs] == list(Variant)
    comparison = pd.read_csv(tmp_path / pipeline.COMPARISON)
    assert list(comparison.columns) == pipeline.COMPARISON_COLUMNS
    assert len(comparison) == 7 * 86 * 3
    assert list(dict.fromkeys(comparison["scenario"])) == [v.value for v in Variant]
    for variant in Variant:
        for name in pipeline.RUN_FILES:
            assert (tmp_path / variant.value / name).is_file()
    ghg = pd.read_csv(tmp_path / "plots/ghg.csv")
    assert set(ghg["scenario"]) == {v.value for v in Variant}
    document = manifest(tmp_path)
    assert document["scenarios"] == [v.value for v in Variant]
    assert document["detector_firings"]["sociotechnical-transition"]
    assert len(document["outputs"]) == 1 + len(PLOT_FILES) + 7 * len(pipeline.RUN_FILES)


def test_comparison_matches_runs(shared_context, tmp_path):
    runs = pipeline.run_scenarios(shared_context, RunConfig(), tmp_path)
    comparison = pipeline.comparison_frame(runs, "market_share")
    baseline = comparison[(comparison["scenario"] == "baseline") & (comparison["technology"] == "ICEV")]
    run = runs[0]
    assert baseline["cumulative_ghg"].iloc[-1] == pytest.approx(run.report.cumulative.loc[2070, "ICEV"])
    assert baseline["share"].to_numpy() == pytest.approx(run.trajectory.annual_series(0, "market_share").to_numpy())


def test_failed_run_leaves_manifest(shared_context, tmp_path):
    config = validate_config({"simulation": {"blow_up_bound": 1.0}})
    with pytest.raises(errors.NumericalBlowUpError):
        pipeline.run_pipeline(shared_context, config, out_dir=tmp_path)
    assert not (tmp_path / "trajectory.csv").exists()
    document = manifest(tmp_path)
    assert document["status"] == "failed"
    assert document["failed_stage"] == "simulate baseline"
    assert "bound" in document["error"]
    assert document["outputs"] == {}


def test_calibration_writes_fit(shared_context, tmp_path):
    data = tmp_path / "observed.csv"
    pipeline.demo_data(shared_context, RunConfig(), data, end_year=2000)
    fit = pipeline.run_calibration(shared_context, RunConfig(), data, tmp_path / "fit")
    assert len(fit) == 11
    assert headers(tmp_path / "fit", pipeline.CALIBRATION_FILES) == read_golden_record(
        "tests/data/calibration-headers"
    )
    document = manifest(tmp_path / "fit")
    assert document["command"] == "calibrate"
    assert document["method"] == "ols"
    assert list(document["inputs"]) == [str(data)]


def test_calibration_needs_data(shared_context, tmp_path):
    with pytest.raises(errors.ConfigValidationError):
        pipeline.run_calibration(shared_context, RunConfig(), out_dir=tmp_path)


def test_modes_from_written_parameters(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), out_dir=tmp_path)
    pipeline.modes_from_parameters(shared_context, RunConfig(), tmp_path / "parameters.csv", tmp_path / "again")
    assert (tmp_path / "again" / "behavior.csv").is_file()
    original = pd.read_csv(tmp_path / "modes.csv")
    again = pd.read_csv(tmp_path / "again" / "modes.csv")
    assert {"side:technology", "side:market"} <= set(again["scope"])

    def per_sub_dimension(frame):
        return frame[~frame["scope"].str.startswith("side:")].reset_index(drop=True)

    assert per_sub_dimension(again).equals(per_sub_dimension(original))


def test_emissions_recomputed_from_run(shared_context, tmp_path):
    pipeline.run_pipeline(shared_context, RunConfig(), "landscape-pressure", tmp_path)
    original = pd.read_csv(tmp_path / "emissions.csv")
    report = pipeline.emissions_from_run(shared_context, tmp_path)
    assert report.scenario == "landscape-pressure"
    again = pd.read_csv(tmp_path / "emissions.csv")
    assert np.allclose(again["cumulative_mt"], original["cumulative_mt"], rtol=1e-6)


def test_emissions_recomputed_from_one_scenario_directory(shared_context, tmp_path):
    pipeline.run_scenarios(shared_context, RunConfig(), tmp_path)
    directory = tmp_path / "niche-favoured"
    original = pd.read_csv(directory / "emissions.csv")
    document = manifest(directory)
    assert document["scenario"] == "niche-favoured"
    assert sorted(document["outputs"]) == sorted(pipeline.RUN_FILES)
    report = pipeline.emissions_from_run(shared_context, directory)
    assert report.scenario == "niche-favoured"
    again = pd.read_csv(directory / "emissions.csv")
    assert np.allclose(again["cumulative_mt"], original["cumulative_mt"], rtol=1e-6)


def test_emissions_need_a_run_directory(tmp_path):
    with pytest.raises(errors.ConfigValidationError, match="manifest"):
        pipeline.read_run(tmp_path)


def test_demo_data_is_reproducible(shared_context, tmp_path):
    config = RunConfig()
    first = pipeline.demo_data(shared_context, config, tmp_path / "a.csv", 1995, noise=0.05, seed=1)
    second = pipeline.demo_data(shared_context, config, tmp_path / "b.csv", 1995, noise=0.05, seed=1)
    clean = pipeline.demo_data(shared_context, config, tmp_path / "c.csv", 1995)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(first.levels, second.levels)
    assert not np.array_equal(first.levels, clean.levels)
    assert list(clean.years) == list(range(1985, 1996))


def test_demo_data_end_year_must_be_inside_horizon(shared_context, tmp_path):
    with pytest.raises(errors.ConfigValidationError, match="end-year"):
        pipeline.demo_data(shared_context, RunConfig(), tmp_path / "a.csv", 1985)
