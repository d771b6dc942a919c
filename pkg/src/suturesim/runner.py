"""Procedure execution: wires devices onto the bus, drives the workflow
state machine, accounts time per phase, and assembles the run report.

A run is fully determined by (config, seed, scenario): device noise,
scan scenes, operator coin flips, and fault times all derive from named
seed streams, and the bus event log hashes identically on replay.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import metrics as metrics_mod
from . import oct_core, oct_synth
from .bus import SimBus
from .config import GlobalConfig
from .controller import (
    Event,
    InteractivePolicy,
    Phase,
    ProcedureState,
    PromptContext,
    ReplayPolicy,
    ScriptedPolicy,
    position_from_edge,
    transition,
)
from .devices import (
    CalibrationOffsets,
    MapsRotator,
    Microcamera,
    RoboticArm,
    SutureTool,
    VesselModel,
    schedule_arm_faults,
)
from .errors import ConnectionLostError, InvalidArgumentError, SutureSimError
from .serialization import to_jsonable, trace_hash
from .vision import SimulatedDetector, TrainedDetector, load_model

SIDES = ("right", "left")


def _frame_payload(frame) -> dict | None:
    """Frame pixels as base64 grayscale bytes for console transport."""
    import base64

    if frame is None:
        return None
    data = np.clip(np.round(frame.pixels * 255), 0, 255).astype(np.uint8)
    return {
        "size": int(data.shape[0]),
        "pixels_b64": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def stream_rng(seed: int, run_index: int, name: str) -> np.random.Generator:
    """Named, run-scoped RNG stream; stable across process runs."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int(run_index), zlib.crc32(name.encode())])
    )


def stratified_offsets(n: int, sd_mm: float, rng: np.random.Generator) -> list[float]:
    """Per-run calibration residuals at shuffled normal quantiles.

    Stratification keeps batch-level placement statistics stable without
    narrowing within-run spread.
    """
    if n < 1:
        raise InvalidArgumentError("need at least one run")
    if n == 1 or sd_mm == 0:
        return [0.0] * n
    z = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    values = (sd_mm * z).tolist()
    rng.shuffle(values)
    return values


class OctSensorSim:
    """Simulated OCT fiber: per-position A-scans from the active scene."""

    def __init__(self, config: GlobalConfig, rng: np.random.Generator,
                 noise_level: float):
        self.config = config
        self.rng = rng
        self.noise_level = noise_level
        self._edge_mm: float | None = None
        self._transition = oct_core.Material.AIR
        self.last_scan: oct_core.AScan | None = None

    def set_scene(self, true_edge_mm: float, transition: oct_core.Material) -> None:
        self._edge_mm = float(true_edge_mm)
        self._transition = transition

    @property
    def true_edge_mm(self) -> float:
        return self._edge_mm if self._edge_mm is not None else 0.0

    @property
    def transition(self) -> oct_core.Material:
        return self._transition

    def acquire(self, position_mm: float) -> oct_core.AScan:
        if self._edge_mm is None:
            raise SutureSimError("no scene loaded")
        if position_mm < self._edge_mm:
            profile = oct_synth.tissue_profile(self.noise_level)
        elif self._transition is oct_core.Material.NITINOL:
            profile = oct_synth.nitinol_profile(self.noise_level)
        else:
            profile = oct_synth.air_profile(self.noise_level)
        scan = oct_synth.gen_ascan(
            profile,
            self.rng,
            n_samples=self.config.oct.n_samples,
            depth_span_mm=self.config.oct.depth_span_mm,
            fiber_position_mm=position_mm,
        )
        self.last_scan = scan
        return scan


@dataclass
class SutureRecord:
    suture_index: int
    side: str
    drives: int = 0
    engaged_drives: int = 0
    retries: int = 0
    interventions: list = field(default_factory=list)
    edge_position_mm: float | None = None
    true_edge_mm: float | None = None
    edge_attempts: int = 0
    transition_truth: str | None = None
    transition_labeled: str | None = None
    bite_depth_mm: float | None = None
    angular_position_deg: float | None = None
    missed_detected: int = 0
    unrepaired_miss: bool = False

    @property
    def needed_intervention(self) -> bool:
        return bool(self.interventions)


@dataclass
class ProcedureReport:
    seed: int
    run_index: int
    config_hash: str
    n_sutures: int
    records: list
    phase_durations_s: dict
    total_time_s: float
    excluded_disconnect_s: float
    adjusted_time_s: float
    time_per_stitch_s: float
    disconnect_count: int
    intervention_count: int
    autonomy_fraction: float
    crossed_stitch: bool
    slip_state: dict
    placement_stats: dict | None
    lumen: dict
    unrepaired_misses: int
    trace_hash: str
    decisions: list

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))


class ProcedureRunner:
    """One anastomosis run on a fresh bus and device ensemble."""

    def __init__(
        self,
        config: GlobalConfig,
        run_index: int = 0,
        policy=None,
        scenario: dict | None = None,
        calibration_residual_mm: float | None = None,
        snapshot_hook=None,
    ):
        self.config = config
        self.run_index = run_index
        self.scenario = scenario or {}
        self.snapshot_hook = snapshot_hook
        seed = config.seed

        self.bus = SimBus(config.bus.topic_latency_ms, config.bus.service_latency_ms)
        self.world_rng = stream_rng(seed, run_index, "world")
        self.policy = policy if policy is not None else ScriptedPolicy(
            config.policy, rng=stream_rng(seed, run_index, "policy"),
            workflow=config.workflow,
        )

        if calibration_residual_mm is None:
            calibration_residual_mm = 0.0
        self.calibration_residual_mm = calibration_residual_mm
        self.arm = RoboticArm(config.devices.arm,
                              offsets=CalibrationOffsets(x_offset_mm=calibration_residual_mm))
        self.maps = MapsRotator(config.devices.maps,
                                rng=stream_rng(seed, run_index, "maps"))
        self.vessel = VesselModel(config.devices.vessel, config.devices.slip,
                                  grip_force_n=config.devices.maps.grip_force_n)
        self.tool = SutureTool(config.devices.tool,
                               rng=stream_rng(seed, run_index, "tool"))
        self.camera = Microcamera(config.devices.camera,
                                  rng=stream_rng(seed, run_index, "camera"))
        self.oct = OctSensorSim(config, stream_rng(seed, run_index, "oct"),
                                config.workflow.procedure_noise_level)
        if config.vision.model_path:
            model, _ = load_model(Path(config.vision.model_path))
            self.detector = TrainedDetector(model)
        else:
            self.detector = SimulatedDetector(
                config.vision.detector.sensitivity,
                config.vision.detector.specificity,
                rng=stream_rng(seed, run_index, "vision"),
            )

        self._register_services()
        self._build_world()
        self._schedule_faults()

        self.records: list[SutureRecord] = []
        self.decisions: list[dict] = []
        self.phase_durations_ms: dict[str, float] = {}
        self._scan_origin_mm = 0.0
        self._est_edge_mm: float | None = None
        self._last_outcome = None
        self._frames: dict[str, object] = {}

    # -- setup ---------------------------------------------------------------

    def _register_services(self) -> None:
        bus = self.bus
        self.arm_endpoint = bus.register_service(
            "arm.move", lambda req: self.arm.move_to(req["target"]))
        bus.register_service(
            "maps.rotate", lambda req: self.maps.rotate(req["side"], req["increment"]))
        bus.register_service("maps.home", lambda req: self.maps.home())
        bus.register_service("oct.acquire",
                             lambda req: self.oct.acquire(req["position_mm"]))
        bus.register_service(
            "tool.drive",
            lambda req: self.tool.needle_drive(
                self.vessel, req["site"], req["side"], req["suture_index"],
                req["geometric_bite_mm"], replace=req.get("replace", False),
                forced_miss=req.get("forced_miss", False)))
        bus.register_service(
            "camera.capture",
            lambda req: self.camera.capture(req["site"], req["side"], req["phase"],
                                            req.get("engaged"),
                                            suture_index=req["suture_index"]))
        bus.register_service(
            "vision.check",
            lambda req: self.detector.verdict(req["before"], req["after"]))

    def _build_world(self) -> None:
        wf = self.config.workflow
        overrides = {str(k): float(v)
                     for k, v in self.scenario.get("true_edge_overrides", {}).items()}
        forced = {(int(s), side) for s, side in self.scenario.get("forced_misses", [])}
        self.world: dict[tuple, dict] = {}
        for suture in range(1, wf.n_sutures + 1):
            for side in SIDES:
                true_edge = wf.scene_edge_base_mm + float(
                    self.world_rng.uniform(-wf.scene_edge_jitter_mm,
                                           wf.scene_edge_jitter_mm))
                transition = (oct_core.Material.NITINOL
                              if float(self.world_rng.uniform()) < wf.nitinol_probability
                              else oct_core.Material.AIR)
                key = f"{suture}:{side}"
                if key in overrides:
                    true_edge = overrides[key]
                self.world[(suture, side)] = {
                    "true_edge_mm": true_edge,
                    "transition": transition,
                    "forced_miss_pending": (suture, side) in forced,
                }

    def _schedule_faults(self) -> None:
        schedule_arm_faults(self.bus, self.arm, self.arm_endpoint,
                            self.scenario.get("faults", []),
                            self.config.devices.arm.reconnect_delay_s)

    # -- helpers ---------------------------------------------------------------

    def _charge(self, seconds: float) -> None:
        self.bus.advance(seconds * 1000.0)

    def _record_decision(self, entry: dict) -> None:
        self.decisions.append(entry)
        self.bus.record("operator", "decision", entry)

    def _current(self) -> SutureRecord:
        return self.records[-1]

    def _ensure_record(self, state: ProcedureState) -> SutureRecord:
        if (not self.records
                or self.records[-1].suture_index != state.suture_index
                or self.records[-1].side != state.vessel_side):
            self.records.append(SutureRecord(suture_index=state.suture_index,
                                             side=state.vessel_side))
            # each placement gets a fresh scan setup; jogs apply to the
            # current site only
            self._scan_origin_mm = 0.0
        return self.records[-1]

    # -- phase bodies ------------------------------------------------------------

    def _call_arm(self, target) -> None:
        """Arm motion with fault handling: on a lost connection, wait for
        the scheduled reconnect and signal the caller to retry the phase."""
        self.bus.call("arm.move", {"target": [float(v) for v in target]})

    def _run_edge_scan(self, record: SutureRecord) -> Event:
        cfg = self.config.oct
        scene = self.world[(record.suture_index, record.side)]
        self.oct.set_scene(scene["true_edge_mm"], scene["transition"])
        thresholds = oct_core.ClassifierThresholds(
            tau_air=cfg.tau_air, tau_rmse=cfg.tau_rmse, tau_surface=cfg.tau_surface,
            smoothing_window=cfg.smoothing_window)

        origin = self._scan_origin_mm
        template_scan = self.bus.call("oct.acquire", {"position_mm": origin})
        try:
            template = oct_core.extract_template(template_scan, thresholds,
                                                 span_mm=cfg.template_span_mm)
        except SutureSimError:
            record.edge_attempts = cfg.edge_max_attempts
            self._charge(self.config.timing.edge_scan_s)
            return Event("edge_scan_failed", {"reason": "no_template"})

        result = oct_core.edge_scan(
            lambda p: self.bus.call("oct.acquire", {"position_mm": p}),
            start_mm=origin,
            step_mm=cfg.edge_step_mm,
            max_travel_mm=cfg.edge_max_travel_mm,
            template=template,
            thr=thresholds,
            max_attempts=cfg.edge_max_attempts,
        )
        record.edge_attempts += result.attempts_used
        self._charge(self.config.timing.edge_scan_s * result.attempts_used)
        if not result.found:
            return Event("edge_scan_failed", {"attempts": result.attempts_used})

        est = float(result.edge_position_mm)
        record.transition_labeled = result.transition_material.value
        if self.snapshot_hook and self.oct.last_scan is not None:
            last_scan = self.oct.last_scan  # no fresh acquisition: replay-safe
            self.snapshot_hook("ascan", {
                "suture_index": record.suture_index,
                "side": record.side,
                "edge_position_mm": est,
                "transition": result.transition_material.value,
                "classifications": [[p, m.value] for p, m in result.classifications],
                "samples": [round(float(v), 4) for v in last_scan.samples],
                "depth_per_sample_mm": last_scan.depth_per_sample_mm,
                "tau_air": cfg.tau_air,
                "tau_rmse": cfg.tau_rmse,
                "t_ms": self.bus.clock.now_ms,
            })
        corrected = self.policy.review_edge(est, scene["true_edge_mm"])
        if corrected is not None:
            self._record_decision({"kind": "false_edge_correction",
                                   "corrected_edge_mm": float(corrected),
                                   "suture": record.suture_index,
                                   "side": record.side})
            record.interventions.append("false_edge_correction")
            self._charge(self.config.timing.jog_s)
            est = float(corrected)
        record.edge_position_mm = est
        record.true_edge_mm = scene["true_edge_mm"]
        self._est_edge_mm = est
        return Event("edge_found", {"edge_position_mm": est,
                                    "material": result.transition_material.value,
                                    "attempts": result.attempts_used})

    def _run_place_suture(self, record: SutureRecord) -> Event:
        wf = self.config.workflow
        pose = position_from_edge(self._est_edge_mm, CalibrationOffsets(),
                                  wf.bite_depth_target_mm)
        self._call_arm(pose)
        self._charge(self.config.timing.move_s)
        scene = self.world[(record.suture_index, record.side)]
        geometric_bite = scene["true_edge_mm"] - float(self.arm.pose[0])
        forced_miss = scene["forced_miss_pending"]
        scene["forced_miss_pending"] = False
        outcome = self.bus.call("tool.drive", {
            "site": record.suture_index,
            "side": record.side,
            "suture_index": record.suture_index,
            "geometric_bite_mm": geometric_bite,
            "replace": record.engaged_drives > 0,
            "forced_miss": forced_miss,
        })
        self._charge(self.config.timing.drive_s)
        record.drives += 1
        if outcome.engaged:
            record.engaged_drives += 1
            record.bite_depth_mm = outcome.bite_depth_actual_mm
            placement = self.vessel.placements[record.side][-1]
            record.angular_position_deg = placement.angular_position_deg
        self._last_outcome = outcome
        return Event("suture_driven", {"engaged": outcome.engaged})

    def _run_vision_check(self, record: SutureRecord) -> Event:
        verdict = self.bus.call("vision.check", {
            "before": self._frames.get("before"),
            "after": self._frames.get("after"),
        })
        if self.snapshot_hook:
            self.snapshot_hook("camera", {
                "suture_index": record.suture_index,
                "side": record.side,
                "verdict": verdict,
                "before": _frame_payload(self._frames.get("before")),
                "after": _frame_payload(self._frames.get("after")),
                "t_ms": self.bus.clock.now_ms,
            })
        if verdict == "missed":
            record.missed_detected += 1
            return Event("vision_missed")
        return Event("vision_success")

    # -- main loop -----------------------------------------------------------------

    def run(self) -> ProcedureReport:
        wf = self.config.workflow
        timing = self.config.timing
        state = ProcedureState(n_sutures=wf.n_sutures)
        self._emit_state(state, None)

        while state.phase is not Phase.DONE:
            phase = state.phase
            t0 = self.bus.clock.now_ms
            try:
                event = self._execute_phase(state)
            except ConnectionLostError:
                event = Event("connection_lost")
            self._accumulate(phase, t0)
            state = self._apply(state, event)
        return self._finalize(state)

    def _execute_phase(self, state: ProcedureState) -> Event:
        timing = self.config.timing
        phase = state.phase
        if phase is Phase.LOAD_VESSELS:
            self.policy.acknowledge("vessels_loaded")
            self._record_decision({"kind": "vessels_loaded"})
            self._charge(timing.load_vessels_s)
            return Event("vessels_loaded")
        if phase in (Phase.ROTATE_TO_START, Phase.ROTATE_TO_NEXT):
            achieved = self.bus.call("maps.rotate",
                                     {"side": "both",
                                      "increment": self.config.devices.maps.rotation_step_deg})
            self._charge(timing.rotate_s)
            return Event("rotate_done", {"achieved": achieved})
        if phase is Phase.ROTATE_TO_BEGINNING:
            achieved = self.bus.call("maps.home", {})
            self._charge(timing.rotate_s)
            return Event("rotate_done", {"achieved": achieved})
        if phase is Phase.CAPTURE_BEFORE:
            record = self._ensure_record(state)
            frame = self.bus.call("camera.capture", {
                "site": state.suture_index, "side": state.vessel_side,
                "phase": "before", "suture_index": state.suture_index})
            self._frames["before"] = frame
            self._charge(timing.imaging_s)
            return Event("before_captured")
        if phase is Phase.EDGE_SCAN:
            return self._run_edge_scan(self._current())
        if phase is Phase.PLACE_SUTURE:
            return self._run_place_suture(self._current())
        if phase is Phase.CAPTURE_AFTER:
            record = self._current()
            frame = self.bus.call("camera.capture", {
                "site": state.suture_index, "side": state.vessel_side,
                "phase": "after", "suture_index": state.suture_index,
                "engaged": bool(self._last_outcome.engaged)})
            self._frames["after"] = frame
            self._charge(timing.imaging_s)
            vision_event = self._run_vision_check(record)
            return vision_event
        if phase is Phase.MISSED_PROMPT:
            record = self._current()
            if state.retries_this_side >= self.config.workflow.max_retries_per_side:
                self._record_decision({"kind": "retry_no", "forced": "retry_cap",
                                       "suture": record.suture_index,
                                       "side": record.side})
                record.interventions.append("retry_cap_reached")
                return Event("retry_no")
            context = PromptContext(kind="retry", suture_index=record.suture_index,
                                    vessel_side=record.side)
            self._emit_prompt(context)
            decision = self.policy.decide_retry(context)
            self._record_decision({"kind": decision.kind,
                                   "suture": record.suture_index,
                                   "side": record.side})
            record.interventions.append(decision.kind)
            if decision.kind == "retry_yes":
                record.retries += 1
            self._charge(timing.decision_s)
            return Event(decision.kind)
        if phase is Phase.AWAIT_MANUAL_JOG:
            record = self._current()
            context = PromptContext(kind="jog", suture_index=record.suture_index,
                                    vessel_side=record.side,
                                    detail={"scan_origin_mm": self._scan_origin_mm})
            self._emit_prompt(context)
            decision = self.policy.decide_jog(context)
            if decision is None:
                # operator eyeballs the vessel under the scanner and jogs
                # the fiber to roughly one template-span short of the edge
                scene = self.world[(record.suture_index, record.side)]
                target = scene["true_edge_mm"] - self.config.oct.template_span_mm
                dx = target - self._scan_origin_mm
                decision_jog = (float(dx), 0.0, 0.0)
            else:
                decision_jog = tuple(float(v) for v in decision.jog_mm)
            limit = self.config.workflow.max_jog_mm
            if any(abs(v) > limit for v in decision_jog):
                raise InvalidArgumentError(
                    f"jog {decision_jog} exceeds the {limit} mm bound")
            self._record_decision({"kind": "manual_jog", "jog_mm": list(decision_jog),
                                   "suture": record.suture_index,
                                   "side": record.side})
            record.interventions.append("manual_jog")
            self._scan_origin_mm += decision_jog[0]
            self._charge(timing.jog_s)
            return Event("jog_applied", {"jog_mm": decision_jog})
        if phase is Phase.AWAIT_PULL_AND_CUT:
            self.policy.acknowledge("pull_cut_done")
            self._record_decision({"kind": "pull_cut_done",
                                   "suture": state.suture_index})
            self._charge(timing.pull_cut_s)
            return Event("pull_cut_done")
        if phase is Phase.AWAIT_TIE_OFF:
            self.policy.acknowledge("tie_off_done")
            self._record_decision({"kind": "tie_off_done"})
            self._charge(timing.tie_off_s)
            return Event("tie_off_done")
        if phase is Phase.AWAIT_RECONNECT:
            self._await_reconnect()
            return Event("reconnected")
        raise SutureSimError(f"no executor for phase {phase}")

    def _await_reconnect(self) -> None:
        while not self.arm.connected:
            next_time = self.bus.clock.peek_time()
            if next_time is None:
                raise SutureSimError("arm disconnected with no reconnect scheduled")
            self.bus.step(next_time)

    def _accumulate(self, phase: Phase, t0_ms: float) -> None:
        elapsed = self.bus.clock.now_ms - t0_ms
        key = phase.value
        self.phase_durations_ms[key] = self.phase_durations_ms.get(key, 0.0) + elapsed

    def _apply(self, state: ProcedureState, event: Event) -> ProcedureState:
        new_state = transition(state, event)
        self.bus.record("controller.state", "transition", {
            "from": state.phase.value, "event": event.kind,
            "to": new_state.phase.value, "suture": new_state.suture_index,
            "side": new_state.vessel_side})
        self._emit_state(new_state, event)
        return new_state

    def _emit_state(self, state: ProcedureState, event: Event | None) -> None:
        if self.snapshot_hook:
            self.snapshot_hook("state", {
                "phase": state.phase.value,
                "suture_index": state.suture_index,
                "vessel_side": state.vessel_side,
                "t_ms": self.bus.clock.now_ms,
                "event": event.kind if event else None,
            })

    def _emit_prompt(self, context: PromptContext) -> None:
        self.bus.record("operator", "prompt", {
            "kind": context.kind, "suture": context.suture_index,
            "side": context.vessel_side})
        if self.snapshot_hook:
            self.snapshot_hook("prompt", {
                "kind": context.kind, "suture_index": context.suture_index,
                "vessel_side": context.vessel_side, "detail": context.detail,
                "t_ms": self.bus.clock.now_ms,
            })

    # -- report -----------------------------------------------------------------

    def _finalize(self, state: ProcedureState) -> ProcedureReport:
        now_ms = self.bus.clock.now_ms
        total_s = sum(self.phase_durations_ms.values()) / 1000.0
        excluded_s = self.arm.excluded_time_ms(now_ms) / 1000.0
        adjusted_s = total_s - excluded_s
        wf = self.config.workflow

        placements = {
            side: [(p.bite_depth_mm, p.angular_position_deg)
                   for p in self.vessel.placements[side]]
            for side in SIDES
        }
        stats = None
        if all(len(v) >= 2 for v in placements.values()):
            ps = metrics_mod.placement_stats(placements,
                                             self.config.devices.vessel.diameter_mm)
            stats = {
                "bite_mean_mm": ps.bite_mean_mm,
                "bite_sd_mm": ps.bite_sd_mm,
                "bite_cov_percent": ps.bite_cov_percent,
                "spacing_cov_percent": ps.spacing_cov_percent,
                "bite_depths_mm": list(ps.bite_depths_mm),
                "spacings_mm": list(ps.spacings_mm),
            }

        lumen = self._lumen_outcome(stats)
        interventions = sum(len(r.interventions) for r in self.records)
        placements_total = len(self.records)
        clean = sum(1 for r in self.records if not r.needed_intervention)
        for record in self.records:
            record.unrepaired_miss = record.engaged_drives == 0

        return ProcedureReport(
            seed=self.config.seed,
            run_index=self.run_index,
            config_hash=self.config.hash(),
            n_sutures=wf.n_sutures,
            records=[asdict(r) | {"needed_intervention": r.needed_intervention}
                     for r in self.records],
            phase_durations_s={k: v / 1000.0
                               for k, v in sorted(self.phase_durations_ms.items())},
            total_time_s=total_s,
            excluded_disconnect_s=excluded_s,
            adjusted_time_s=adjusted_s,
            time_per_stitch_s=adjusted_s / wf.n_sutures,
            disconnect_count=self.arm.disconnect_count,
            intervention_count=interventions,
            autonomy_fraction=clean / placements_total if placements_total else 1.0,
            crossed_stitch=any(self.vessel.crossed_stitch(s) for s in SIDES),
            slip_state={s: asdict(self.vessel.slip_state[s]) for s in SIDES},
            placement_stats=stats,
            lumen=lumen,
            unrepaired_misses=sum(1 for r in self.records if r.unrepaired_miss),
            trace_hash=self.bus.log_hash(),
            decisions=self.decisions,
        )

    def _lumen_outcome(self, stats: dict | None) -> dict:
        raw_id = self.config.devices.vessel.diameter_mm
        mean_bite = stats["bite_mean_mm"] if stats else self.config.workflow.bite_depth_target_mm
        rho = 0.65 * mean_bite / raw_id + float(self.world_rng.normal(0.0, 0.09))
        rho = min(max(rho, 0.0), 0.95)
        true_id = raw_id * float(np.sqrt(1.0 - rho))
        measured_id = metrics_mod.pin_gauge(true_id)
        measured_raw = metrics_mod.pin_gauge(raw_id)
        if measured_id <= 0:
            reduction = 100.0
        else:
            reduction = metrics_mod.lumen_reduction(measured_id, measured_raw)
        return {
            "true_inner_diameter_mm": true_id,
            "measured_inner_diameter_mm": measured_id,
            "raw_inner_diameter_mm": measured_raw,
            "reduction_percent": reduction,
        }


def run_single(config: GlobalConfig, run_index: int = 0, policy=None,
               scenario: dict | None = None,
               calibration_residual_mm: float | None = None,
               snapshot_hook=None) -> tuple:
    runner = ProcedureRunner(config, run_index=run_index, policy=policy,
                             scenario=scenario,
                             calibration_residual_mm=calibration_residual_mm,
                             snapshot_hook=snapshot_hook)
    report = runner.run()
    return report, runner


def run_batch(config: GlobalConfig, n_runs: int, scenario: dict | None = None) -> list:
    """Independent runs with stratified per-run calibration residuals."""
    ladder_rng = stream_rng(config.seed, 0xBA7C4, "calibration-ladder")
    residuals = stratified_offsets(
        n_runs, config.devices.arm.calibration_residual_sd_mm, ladder_rng)
    reports = []
    for r in range(n_runs):
        report, _ = run_single(config, run_index=r, scenario=scenario,
                               calibration_residual_mm=residuals[r])
        reports.append(report)
    return reports


def batch_summary(reports: list) -> dict:
    """Pooled placement and outcome statistics across a batch of runs."""
    bites: list[float] = []
    spacings: list[float] = []
    per_run_sd = []
    lumen = []
    times = []
    autonomy = []
    for report in reports:
        stats = report.placement_stats
        if stats:
            bites.extend(stats["bite_depths_mm"])
            spacings.extend(stats["spacings_mm"])
            per_run_sd.append(stats["bite_sd_mm"])
        lumen.append(report.lumen["reduction_percent"])
        times.append(report.time_per_stitch_s)
        autonomy.append(report.autonomy_fraction)
    bites_arr = np.asarray(bites)
    summary = {
        "n_runs": len(reports),
        "bite_mean_mm": float(np.mean(bites_arr)) if bites else None,
        "bite_sd_within_run_mm": float(np.mean(per_run_sd)) if per_run_sd else None,
        "bite_sd_pooled_mm": float(np.std(bites_arr, ddof=1)) if len(bites) > 1 else None,
        "bite_cov_percent": metrics_mod.cov_percent(bites) if len(bites) > 1 else None,
        "spacing_cov_percent": metrics_mod.cov_percent(spacings) if len(spacings) > 1 else None,
        "n_placements": len(bites),
        "lumen_reduction_percent_mean": float(np.mean(lumen)),
        "lumen_reduction_percent_sd": float(np.std(lumen, ddof=1)) if len(lumen) > 1 else 0.0,
        "time_per_stitch_s_mean": float(np.mean(times)),
        "time_per_stitch_s_sd": float(np.std(times, ddof=1)) if len(times) > 1 else 0.0,
        "autonomy_fraction": float(np.mean(autonomy)),
        "crossed_stitch_runs": sum(1 for r in reports if r.crossed_stitch),
        "disconnects_total": sum(r.disconnect_count for r in reports),
    }
    return summary


def simulated_for_comparison(reports: list) -> dict:
    """Shape batch results for metrics.compare_report."""
    summary = batch_summary(reports)
    lumen = [r.lumen["reduction_percent"] for r in reports]
    times = [r.time_per_stitch_s for r in reports]
    return {
        "bite_cov_percent": {"value": summary["bite_cov_percent"],
                             "n": summary["n_placements"]},
        "spacing_cov_percent": {"value": summary["spacing_cov_percent"],
                                "n": summary["n_placements"]},
        "lumen_reduction_percent": {"mean": summary["lumen_reduction_percent_mean"],
                                    "sd": summary["lumen_reduction_percent_sd"],
                                    "n": len(reports)},
        "bubble_leak_psi": None,  # not modeled; fixtures only
        "time_per_stitch_s": {"mean": summary["time_per_stitch_s_mean"],
                              "sd": summary["time_per_stitch_s_sd"],
                              "n": len(reports)},
        "raw": {"lumen_reduction_percent": lumen, "time_per_stitch_s": times},
    }


# -- event-log files and replay ------------------------------------------------


def write_event_log(path: Path, config: GlobalConfig, runner: ProcedureRunner,
                    report: ProcedureReport, scenario: dict | None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_dict = config.to_dict()
    config_dict.pop("out_dir", None)  # deployment detail, not run identity
    with open(path, "w") as fh:
        header = {"kind": "header", "format": 1, "config": to_jsonable(config_dict),
                  "config_hash": config.hash(), "seed": config.seed,
                  "run_index": runner.run_index,
                  "calibration_residual_mm": runner.calibration_residual_mm,
                  "scenario": to_jsonable(scenario or {}),
                  "decisions": to_jsonable(runner.decisions)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in runner.bus.log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        footer = {"kind": "footer", "trace_hash": report.trace_hash,
                  "events": len(runner.bus.log)}
        fh.write(json.dumps(footer, sort_keys=True) + "\n")


def replay_event_log(path: Path) -> dict:
    """Re-execute a logged run and compare state-trace hashes."""
    from .config import config_from_dict

    path = Path(path)
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise InvalidArgumentError(f"{path}: missing log header")
    header = lines[0]
    footer = lines[-1] if lines[-1].get("kind") == "footer" else None
    config = config_from_dict(header["config"])
    policy = ReplayPolicy(header.get("decisions", []))
    report, _ = run_single(config, run_index=header.get("run_index", 0),
                           policy=policy, scenario=header.get("scenario") or {},
                           calibration_residual_mm=header.get(
                               "calibration_residual_mm", 0.0))
    recorded_hash = footer["trace_hash"] if footer else trace_hash(
        [l for l in lines[1:] if l.get("kind") != "footer"])
    return {
        "recorded_hash": recorded_hash,
        "replayed_hash": report.trace_hash,
        "match": recorded_hash == report.trace_hash,
    }
