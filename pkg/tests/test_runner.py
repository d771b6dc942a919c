import json

import numpy as np
import pytest

from suturesim.config import GlobalConfig
from suturesim.errors import InvalidArgumentError
from suturesim.runner import (
    batch_summary,
    replay_event_log,
    run_batch,
    run_single,
    simulated_for_comparison,
    stratified_offsets,
    stream_rng,
    write_event_log,
)


def perfect_config(seed=7):
    """No misses, no detector errors, no faults: the nominal workflow."""
    config = GlobalConfig(seed=seed)
    config.devices.tool.miss_probability = 0.0
    config.vision.detector.sensitivity = 1.0
    config.vision.detector.specificity = 1.0
    return config


class TestPerfectRun:
    def setup_method(self):
        self.config = perfect_config()
        self.report, self.runner = run_single(self.config)

    def test_sixteen_engaged_drives(self):
        assert sum(r["drives"] for r in self.report.records) == 16
        assert sum(r["engaged_drives"] for r in self.report.records) == 16
        assert self.report.intervention_count == 0
        assert self.report.autonomy_fraction == 1.0
        assert self.report.unrepaired_misses == 0

    def test_right_before_left_every_suture(self):
        order = [(r["suture_index"], r["side"]) for r in self.report.records]
        expected = [(s, side) for s in range(1, 9) for side in ("right", "left")]
        assert order == expected

    def test_exactly_one_rotation_between_sutures(self):
        rotations = [rec for rec in self.runner.bus.log
                     if rec["channel"] == "maps.rotate" and rec["kind"] == "request"]
        # one rotate-to-start plus one rotate after each of 8 sutures
        assert len(rotations) == 9
        transitions = [rec["payload"] for rec in self.runner.bus.log
                       if rec["channel"] == "controller.state"]
        rotate_next = [t for t in transitions if t["to"] == "rotate_to_next"]
        assert len(rotate_next) == 8

    def test_reaches_done(self):
        transitions = [rec["payload"] for rec in self.runner.bus.log
                       if rec["channel"] == "controller.state"]
        assert transitions[-1]["to"] == "done"

    def test_time_accounting_sums(self):
        total = sum(self.report.phase_durations_s.values())
        assert total == pytest.approx(self.report.total_time_s, abs=1e-9)
        assert self.report.excluded_disconnect_s == 0.0
        assert self.report.adjusted_time_s == pytest.approx(self.report.total_time_s)

    def test_every_engaged_drive_in_exactly_one_record(self):
        assert len(self.report.records) == 16
        for record in self.report.records:
            assert record["engaged_drives"] == 1

    def test_placements_recorded_both_sides(self):
        for side in ("right", "left"):
            assert len(self.runner.vessel.placements[side]) == 8


class TestForcedMissRetry:
    def test_retry_yes_adds_one_drive(self):
        config = perfect_config(seed=5)
        scenario = {"forced_misses": [[3, "right"]]}
        report, _ = run_single(config, scenario=scenario)
        assert sum(r["drives"] for r in report.records) == 17
        rec = next(r for r in report.records
                   if r["suture_index"] == 3 and r["side"] == "right")
        assert rec["retries"] == 1
        assert rec["missed_detected"] == 1
        assert rec["interventions"] == ["retry_yes"]
        assert rec["needed_intervention"] is True
        intervened = sum(1 for r in report.records if r["needed_intervention"])
        assert report.autonomy_fraction == pytest.approx((16 - intervened) / 16)
        assert intervened >= 1

    def test_retry_no_leaves_unrepaired_miss(self):
        config = perfect_config(seed=5)
        config.policy.retry_answers = ("no",)
        scenario = {"forced_misses": [[2, "left"]]}
        report, _ = run_single(config, scenario=scenario)
        assert sum(r["drives"] for r in report.records) == 16
        rec = next(r for r in report.records
                   if r["suture_index"] == 2 and r["side"] == "left")
        assert rec["interventions"] == ["retry_no"]
        assert rec["unrepaired_miss"] is True
        assert report.unrepaired_misses == 1

    def test_retry_cap_forces_proceed(self):
        config = perfect_config(seed=5)
        config.devices.tool.miss_probability = 1.0  # every drive misses
        config.workflow.n_sutures = 1
        report, _ = run_single(config)
        rec = report.records[0]
        assert rec["retries"] == config.workflow.max_retries_per_side
        assert "retry_cap_reached" in rec["interventions"]
        assert rec["unrepaired_miss"] is True


class TestEdgeScanFailure:
    def test_jog_after_three_failed_passes(self):
        config = perfect_config(seed=9)
        # edge beyond the scan travel: all-tissue passes, then operator jog
        scenario = {"true_edge_overrides": {"1:right": 12.0}}
        report, runner = run_single(config, scenario=scenario)
        rec = report.records[0]
        assert rec["edge_attempts"] >= 3
        assert "manual_jog" in rec["interventions"]
        jog_decisions = [d for d in report.decisions if d["kind"] == "manual_jog"]
        assert len(jog_decisions) == 1
        # scan resumed and the edge was found near 12 mm
        assert rec["edge_position_mm"] == pytest.approx(12.0, abs=0.2)
        assert len(report.records) == 16

    def test_scripted_jog_vector_used(self):
        config = perfect_config(seed=9)
        config.policy.jogs = ((10.2, 0.0, 0.0),)
        scenario = {"true_edge_overrides": {"1:right": 12.0}}
        report, _ = run_single(config, scenario=scenario)
        jog = next(d for d in report.decisions if d["kind"] == "manual_jog")
        assert jog["jog_mm"] == [10.2, 0.0, 0.0]

    def test_oversized_jog_rejected(self):
        config = perfect_config(seed=9)
        config.policy.jogs = ((99.0, 0.0, 0.0),)
        scenario = {"true_edge_overrides": {"1:right": 12.0}}
        with pytest.raises(InvalidArgumentError):
            run_single(config, scenario=scenario)


class TestFaults:
    def test_five_disconnects_excluded_exactly(self):
        config = GlobalConfig(seed=13)
        times = [100.0, 600.0, 1100.0, 1600.0, 2100.0]
        report, _ = run_single(config, scenario={"faults": times})
        assert report.disconnect_count == 5
        expected = 5 * config.devices.arm.reconnect_delay_s
        assert report.excluded_disconnect_s == pytest.approx(expected, abs=1e-9)
        assert report.adjusted_time_s == pytest.approx(
            report.total_time_s - expected, abs=1e-9)
        assert len(report.records) == 16  # procedure completed

    def test_fault_during_idle_only_toggles(self):
        config = perfect_config(seed=13)
        # immediately before anything moves
        report, _ = run_single(config, scenario={"faults": [1.0]})
        assert report.disconnect_count == 1
        assert len(report.records) == 16


class TestDeterminism:
    def test_same_seed_same_trace(self):
        a, _ = run_single(GlobalConfig(seed=21))
        b, _ = run_single(GlobalConfig(seed=21))
        assert a.trace_hash == b.trace_hash
        assert a.to_dict() == b.to_dict()

    def test_different_seed_different_trace(self):
        a, _ = run_single(GlobalConfig(seed=21))
        b, _ = run_single(GlobalConfig(seed=22))
        assert a.trace_hash != b.trace_hash

    def test_replay_from_log(self, tmp_path):
        config = GlobalConfig(seed=31)
        scenario = {"faults": [500.0], "forced_misses": [[4, "left"]]}
        report, runner = run_single(config, scenario=scenario)
        log = tmp_path / "run.jsonl"
        write_event_log(log, config, runner, report, scenario)
        result = replay_event_log(log)
        assert result["match"] is True
        assert result["recorded_hash"] == report.trace_hash

    def test_log_is_valid_jsonl(self, tmp_path):
        config = GlobalConfig(seed=31)
        report, runner = run_single(config)
        log = tmp_path / "run.jsonl"
        write_event_log(log, config, runner, report, None)
        lines = log.read_text().splitlines()
        rows = [json.loads(line) for line in lines]
        assert rows[0]["kind"] == "header"
        assert rows[-1]["kind"] == "footer"
        assert rows[-1]["events"] == len(rows) - 2


class TestBatch:
    def test_stratified_offsets_centered(self):
        rng = stream_rng(1, 0, "test")
        offsets = stratified_offsets(5, 0.5, rng)
        assert len(offsets) == 5
        assert float(np.mean(offsets)) == pytest.approx(0.0, abs=1e-12)
        assert stratified_offsets(1, 0.5, rng) == [0.0]

    def test_batch_summary_shape(self):
        reports = run_batch(GlobalConfig(seed=7), 2)
        summary = batch_summary(reports)
        assert summary["n_runs"] == 2
        assert summary["n_placements"] == 32
        assert 0 < summary["bite_mean_mm"] < 3
        comp = simulated_for_comparison(reports)
        assert comp["time_per_stitch_s"]["n"] == 2
        assert comp["bubble_leak_psi"] is None
