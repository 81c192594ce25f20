"""Scenario schema, sequencer, output emission and the CLI."""

import json
from pathlib import Path

import numpy as np
import pytest

from cinedrone import cli
from cinedrone.config import (ScenarioParseError, ScenarioValidationError,
                              load_scenario, dump_scenario,
                              scenario_from_dict)
from cinedrone.runlog import (RunLog, emit_outputs, summarize,
                              summary_metrics)
from cinedrone.scene import run_closed_loop

SCENARIOS = Path(__file__).parent.parent / "src/cinedrone/scenarios"
SHIPPED = sorted(SCENARIOS.glob("*.json"))


def minimal_raw():
    return {
        "name": "minimal",
        "camera": {"image_width": 960, "image_height": 540,
                   "sensor_width_mm": 23.76, "sensor_height_mm": 13.365,
                   "principal_u": 480.0, "principal_v": 270.0},
        "control": {"period": 0.2, "substeps": 2, "duration": 0.4},
        "targets": [{"id": "thing", "nature": "object", "height": 1.0,
                     "width": 1.0, "waypoints": [[0.0, 8.0, 0.0, 1.0]]}],
        "sequences": [{"start": 0.0, "instructions": {
            "composition": [{"target": "thing", "point": "center",
                             "pixel": [480.0, 270.0], "weight": 1.0}]}}],
    }


class TestLoading:
    @pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.stem)
    def test_shipped_scenarios_load(self, path):
        config = load_scenario(path)
        assert config.targets and config.sequences

    def test_minimal_scenario(self):
        config = scenario_from_dict(minimal_raw())
        assert config.name == "minimal"
        assert len(config.targets) == 1

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ScenarioParseError):
            load_scenario(bad)

    def test_sequence_order_validated(self):
        raw = minimal_raw()
        raw["sequences"].append({"start": -1.0, "instructions": {}})
        with pytest.raises(ScenarioValidationError) as info:
            scenario_from_dict(raw)
        assert "sequences[1].start" in str(info.value)

    def test_unknown_target_id(self):
        raw = minimal_raw()
        raw["sequences"][0]["instructions"]["composition"][0]["target"] = \
            "ghost"
        with pytest.raises(ScenarioValidationError) as info:
            scenario_from_dict(raw)
        assert "ghost" in str(info.value)
        assert "composition[0]" in str(info.value)

    def test_negative_weight_rejected(self):
        raw = minimal_raw()
        raw["sequences"][0]["instructions"]["composition"][0]["weight"] = \
            -1.0
        with pytest.raises(ScenarioValidationError):
            scenario_from_dict(raw)

    def test_unsorted_waypoints_rejected(self):
        raw = minimal_raw()
        raw["targets"][0]["waypoints"] = [[1.0, 0, 0, 0], [0.5, 1, 0, 0]]
        with pytest.raises(ScenarioValidationError) as info:
            scenario_from_dict(raw)
        assert "targets[0]" in str(info.value)

    def test_every_violation_reported(self):
        raw = minimal_raw()
        raw["control"]["period"] = -1.0
        raw["targets"][0]["height"] = -2.0
        with pytest.raises(ScenarioValidationError) as info:
            scenario_from_dict(raw)
        assert len(info.value.errors) >= 2


class TestSequencer:
    def test_before_second_sequence(self):
        raw = minimal_raw()
        raw["sequences"].append({"start": 5.0, "instructions": {
            "focal": {"value_mm": 99.0, "weight": 1.0}}})
        config = scenario_from_dict(raw)
        assert config.active_instructions(4.9).focal.weight == 0.0

    def test_boundary_is_closed_open(self):
        raw = minimal_raw()
        raw["sequences"].append({"start": 5.0, "instructions": {
            "focal": {"value_mm": 99.0, "weight": 1.0}}})
        config = scenario_from_dict(raw)
        assert config.active_instructions(5.0).focal.weight == 1.0

    def test_ramp_midpoint(self):
        config = load_scenario(SCENARIOS / "e3_dolly_zoom.json")
        schedule = config.sequences[-1].instructions.focal.schedule
        midpoint = 0.5 * (schedule.times[0] + schedule.times[-1])
        active = config.active_instructions(midpoint)
        # halfway through the 35 -> 450 mm ramp
        assert active.focal.schedule.value_at(midpoint) == pytest.approx(
            242.5)

    def test_negative_time_rejected(self):
        config = scenario_from_dict(minimal_raw())
        with pytest.raises(ValueError):
            config.active_instructions(-0.1)


class TestRoundTrip:
    @pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.stem)
    def test_shipped_scenarios_round_trip(self, path, tmp_path):
        config = load_scenario(path)
        out = tmp_path / "dumped.json"
        dump_scenario(config, out)
        again = load_scenario(out)
        assert again.to_dict() == config.to_dict()


class TestOutputs:
    def test_empty_log_header_only(self, tmp_path):
        log = RunLog(columns=["a", "b"], meta={"name": "x", "seed": 0})
        paths = emit_outputs(log, tmp_path)
        assert paths[0].read_text() == "a,b\n"

    def test_summary_min_distance_consistency(self, tmp_path):
        log = RunLog(columns=["collision_residual_min"],
                     meta={"name": "x", "seed": 0, "safety_distance": 2.0})
        for value in (1.0, 0.25, 0.8):
            log.append({"collision_residual_min": value})
        metrics = summary_metrics(log)
        assert metrics["min_safety_distance"] == pytest.approx(2.25)

    def test_schema_is_config_function(self):
        config = scenario_from_dict(minimal_raw())
        logs = [run_closed_loop(config, seed) for seed in (0, 1)]
        assert logs[0].columns == logs[1].columns

    def test_identical_runs_aggregate_with_zero_std(self, tmp_path):
        config = scenario_from_dict(minimal_raw())
        for _ in range(2):
            log = run_closed_loop(config, seed=3)
            # distinct filenames per repetition
            log.meta["seed"] = f"3_{_}"
            emit_outputs(log, tmp_path)
        summarize(tmp_path)
        agg = (tmp_path / "minimal_aggregate.csv").read_text().splitlines()
        header = agg[0].split(",")
        std_cols = [i for i, name in enumerate(header)
                    if name.endswith("_std")]
        for line in agg[1:]:
            values = line.split(",")
            # all-nan columns (inactive set-points) aggregate to nan
            assert all(float(values[i]) == 0.0 or np.isnan(float(values[i]))
                       for i in std_cols)

    def test_csv_round_trip(self, tmp_path):
        log = RunLog(columns=["x", "y"], meta={})
        log.append({"x": 1.25, "y": float("inf")})
        log.append({"x": float("nan"), "y": -3.5})
        path = tmp_path / "log.csv"
        log.to_csv(path)
        back = RunLog.read_csv(path)
        assert back.columns == ["x", "y"]
        assert back.rows[0][0] == 1.25 and back.rows[0][1] == float("inf")
        assert np.isnan(back.rows[1][0]) and back.rows[1][1] == -3.5


class TestCli:
    def test_validate_ok(self, capsys):
        assert cli.main(["validate",
                         str(SCENARIOS / "rule_of_thirds.json")]) == 0
        assert "OK" in capsys.readouterr().out

    def test_validate_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"name": "x"}))
        assert cli.main(["validate", str(bad)]) == 1

    def test_run_and_summarize(self, tmp_path, capsys):
        scenario = tmp_path / "mini.json"
        scenario.write_text(json.dumps(minimal_raw()))
        out_dir = tmp_path / "out"
        assert cli.main(["run", str(scenario), "--seed", "5",
                         "--out", str(out_dir)]) == 0
        csvs = list(out_dir.glob("*.csv"))
        assert len(csvs) == 1 and "seed5" in csvs[0].name
        assert cli.main(["summarize", str(out_dir)]) == 0
        assert (out_dir / "summary_aggregate.json").exists()
