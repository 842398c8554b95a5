"""End-to-end runs of the shipped experiment configs.

These take minutes; run them with ``pytest -m slow``.
"""

import asyncio
import json
from pathlib import Path

import pandas as pd
import pytest

from gridedge.config import ExperimentConfigLoader, parse_config
from gridedge.experiment import ExperimentRunner


CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def load(name, out, **overrides):
    return ExperimentConfigLoader(CONFIG_DIR / name).load().with_overrides(out=str(out), **overrides)


def with_scenario(config, **updates):
    """A validated copy of ``config`` with scenario fields replaced."""
    data = config.model_dump(mode="json")
    data["scenario"].update(updates)
    return parse_config(data, "<test>")


def pipeline(config):
    runner = ExperimentRunner(config)
    runner.synth()
    runner.recover()
    runner.evaluate()
    return runner.root


def summary(root):
    return json.loads((root / "evaluate" / "summary.json").read_text())


def roc(root):
    return pd.read_csv(root / "evaluate" / "roc.csv").sort_values("threshold")


@pytest.fixture(scope="module")
def ev_night_runs(tmp_path_factory):
    """ev_night with meters only, one feeder sensor and every feeder sensor."""
    base = tmp_path_factory.mktemp("ev_night")
    every = len(ExperimentRunner(load("ev_night.yaml", base)).feeder.sensors)
    return {
        kappa: pipeline(load("ev_night.yaml", base / f"kappa{kappa}", kappa=kappa))
        for kappa in (0, 1, every)
    }


def test_feeder_sensors_improve_ev_detection(ev_night_runs):
    meters_only, one, every = (ev_night_runs[k] for k in sorted(ev_night_runs))
    assert summary(meters_only)["max_tpr"] <= 0.2
    assert summary(one)["max_tpr"] >= 0.8
    best = summary(every)
    assert best["max_tpr"] >= 0.9
    assert best["operating_point"]["fpr"] <= 0.1
    for root in ev_night_runs.values():
        tprs = roc(root)["tpr"].tolist()
        assert tprs == sorted(tprs, reverse=True)


def test_hvac_cycling_hurts_detection(ev_night_runs, tmp_path):
    config = load("ev_night.yaml", tmp_path / "hvac", kappa=1)
    cycling = summary(pipeline(with_scenario(config, hvac={"enabled": True})))
    quiet = summary(ev_night_runs[1])
    assert cycling["max_tpr"] <= quiet["max_tpr"] - 0.05
    assert cycling["operating_point"]["fpr"] > quiet["operating_point"]["fpr"]


def test_bandpass_restores_the_summer_pattern(tmp_path):
    result = summary(pipeline(load("summer_hvac.yaml", tmp_path / "summer")))
    assert result["filtered_pattern_correlation"] >= result["pattern_correlation"] + 0.05
    assert result["filtered_pattern_correlation"] >= 0.9


def test_winter_solar_disaggregation(tmp_path):
    result = summary(pipeline(load("winter.yaml", tmp_path / "winter")))
    assert result["pattern_correlation"] >= 0.95
    assert result["solar_relative_rms_error"] <= 0.10


def test_runtime_grows_with_the_sensor_count(tmp_path):
    runner = ExperimentRunner(load("sweep_kappa.yaml", tmp_path / "sweep"))
    asyncio.run(runner.sweep(workers=1))
    timing = pd.read_csv(runner.root / "sweep" / "timing.csv")
    assert sorted(timing["value"].unique().tolist()) == [1, 3, 5, 7]

    monotone = 0
    for _, replicate in timing.groupby("replicate"):
        times = replicate.sort_values("value")["wall_time"].tolist()
        monotone += all(b >= a for a, b in zip(times, times[1:]))
    assert timing["replicate"].nunique() == 5
    assert monotone >= 4


def test_pipeline_reruns_are_byte_identical(tmp_path):
    first = pipeline(load("stock.yaml", tmp_path / "first"))
    second = pipeline(load("stock.yaml", tmp_path / "second"))
    compared = 0
    for command in ("synth", "recover", "evaluate"):
        files = json.loads((first / command / "manifest.json").read_text())["files"]
        for name, entry in files.items():
            if entry["volatile"]:
                continue
            assert (first / command / name).read_bytes() == (second / command / name).read_bytes(), name
            compared += 1
    assert compared > 0
