"""Suturing workflow state machine and operator policies.

The procedure is an explicit phase machine driven by device completions
and operator decisions: per suture, each vessel half gets a before image,
an edge scan, a needle drive, an after image and a vision check, with a
retry prompt on a detected miss; the holders rotate between sutures and
the operator pulls/cuts after each one and ties off at the end. Failed
edge searches pause for a manual jog; arm faults pause for reconnect and
resume the interrupted phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from queue import Empty, Queue
from typing import Sequence

import numpy as np

from .config import PolicyConfig, WorkflowConfig
from .devices import CalibrationOffsets
from .errors import IllegalTransitionError, InvalidArgumentError


class Phase(Enum):
    LOAD_VESSELS = "load_vessels"
    ROTATE_TO_START = "rotate_to_start"
    CAPTURE_BEFORE = "capture_before"
    EDGE_SCAN = "edge_scan"
    PLACE_SUTURE = "place_suture"
    CAPTURE_AFTER = "capture_after"
    MISSED_PROMPT = "missed_prompt"
    AWAIT_MANUAL_JOG = "await_manual_jog"
    AWAIT_PULL_AND_CUT = "await_pull_and_cut"
    ROTATE_TO_NEXT = "rotate_to_next"
    ROTATE_TO_BEGINNING = "rotate_to_beginning"
    AWAIT_TIE_OFF = "await_tie_off"
    AWAIT_RECONNECT = "await_reconnect"
    DONE = "done"


@dataclass(frozen=True)
class Event:
    kind: str
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OperatorDecision:
    kind: str  # retry_yes | retry_no | manual_jog | vessels_loaded |
    #           pull_cut_done | tie_off_done
    jog_mm: tuple | None = None

    VALID = ("retry_yes", "retry_no", "manual_jog", "vessels_loaded",
             "pull_cut_done", "tie_off_done")

    def __post_init__(self):
        if self.kind not in self.VALID:
            raise InvalidArgumentError(f"unknown decision kind {self.kind!r}")
        if self.kind == "manual_jog":
            if self.jog_mm is None or len(self.jog_mm) != 3:
                raise InvalidArgumentError("manual_jog carries a (dx, dy, dz)")


@dataclass(frozen=True)
class ProcedureState:
    phase: Phase = Phase.LOAD_VESSELS
    suture_index: int = 1
    vessel_side: str = "right"
    n_sutures: int = 8
    retries_this_side: int = 0
    resume_phase: Phase | None = None

    def __post_init__(self):
        if not (1 <= self.suture_index <= self.n_sutures):
            raise InvalidArgumentError("suture_index out of range")
        if self.vessel_side not in ("right", "left"):
            raise InvalidArgumentError("vessel_side must be right or left")


def _side_complete(state: ProcedureState) -> ProcedureState:
    if state.vessel_side == "right":
        return replace(state, phase=Phase.CAPTURE_BEFORE, vessel_side="left",
                       retries_this_side=0)
    return replace(state, phase=Phase.ROTATE_TO_NEXT, retries_this_side=0)


def _pull_cut_complete(state: ProcedureState) -> ProcedureState:
    if state.suture_index < state.n_sutures:
        return replace(state, phase=Phase.CAPTURE_BEFORE,
                       suture_index=state.suture_index + 1, vessel_side="right",
                       retries_this_side=0)
    return replace(state, phase=Phase.ROTATE_TO_BEGINNING)


_TABLE = {
    (Phase.LOAD_VESSELS, "vessels_loaded"):
        lambda s, e: replace(s, phase=Phase.ROTATE_TO_START),
    (Phase.ROTATE_TO_START, "rotate_done"):
        lambda s, e: replace(s, phase=Phase.CAPTURE_BEFORE),
    (Phase.CAPTURE_BEFORE, "before_captured"):
        lambda s, e: replace(s, phase=Phase.EDGE_SCAN),
    (Phase.EDGE_SCAN, "edge_found"):
        lambda s, e: replace(s, phase=Phase.PLACE_SUTURE),
    (Phase.EDGE_SCAN, "edge_scan_failed"):
        lambda s, e: replace(s, phase=Phase.AWAIT_MANUAL_JOG),
    (Phase.AWAIT_MANUAL_JOG, "jog_applied"):
        lambda s, e: replace(s, phase=Phase.EDGE_SCAN),
    (Phase.PLACE_SUTURE, "suture_driven"):
        lambda s, e: replace(s, phase=Phase.CAPTURE_AFTER),
    (Phase.CAPTURE_AFTER, "vision_success"):
        lambda s, e: _side_complete(s),
    (Phase.CAPTURE_AFTER, "vision_missed"):
        lambda s, e: replace(s, phase=Phase.MISSED_PROMPT),
    (Phase.MISSED_PROMPT, "retry_yes"):
        lambda s, e: replace(s, phase=Phase.CAPTURE_BEFORE,
                             retries_this_side=s.retries_this_side + 1),
    (Phase.MISSED_PROMPT, "retry_no"):
        lambda s, e: _side_complete(s),
    (Phase.ROTATE_TO_NEXT, "rotate_done"):
        lambda s, e: replace(s, phase=Phase.AWAIT_PULL_AND_CUT),
    (Phase.AWAIT_PULL_AND_CUT, "pull_cut_done"):
        lambda s, e: _pull_cut_complete(s),
    (Phase.ROTATE_TO_BEGINNING, "rotate_done"):
        lambda s, e: replace(s, phase=Phase.AWAIT_TIE_OFF),
    (Phase.AWAIT_TIE_OFF, "tie_off_done"):
        lambda s, e: replace(s, phase=Phase.DONE),
    (Phase.AWAIT_RECONNECT, "reconnected"):
        lambda s, e: replace(s, phase=s.resume_phase, resume_phase=None),
}


def transition(state: ProcedureState, event: Event) -> ProcedureState:
    """Apply one event; illegal events raise and leave the state unchanged."""
    if event.kind == "connection_lost":
        if state.phase in (Phase.AWAIT_RECONNECT, Phase.DONE):
            raise IllegalTransitionError(
                f"connection_lost not legal in {state.phase.value}")
        return replace(state, phase=Phase.AWAIT_RECONNECT, resume_phase=state.phase)
    handler = _TABLE.get((state.phase, event.kind))
    if handler is None:
        raise IllegalTransitionError(
            f"event {event.kind!r} not legal in phase {state.phase.value!r}")
    return handler(state, event)


def position_from_edge(
    edge_position_mm: float,
    offsets: CalibrationOffsets,
    bite_depth_target_mm: float,
) -> np.ndarray:
    """Needle pose: the edge shifted inward by the bite target, plus offsets."""
    if bite_depth_target_mm < 0:
        raise InvalidArgumentError("bite depth target must be >= 0")
    base = np.array([edge_position_mm - bite_depth_target_mm, 0.0, 0.0])
    return base + offsets.as_vector()


# -- operator policies --------------------------------------------------------


@dataclass
class PromptContext:
    kind: str  # "retry" | "jog"
    suture_index: int
    vessel_side: str
    detail: dict = field(default_factory=dict)


class ScriptedPolicy:
    """Deterministic or seeded-probabilistic decision source.

    Scripted answers are consumed in order; when the script runs out,
    retry prompts fall back to a seeded coin with p_retry_yes and jog
    prompts to the operator-eyeballs-the-screen model (the caller supplies
    the corrective jog computed from what the operator can see).
    """

    interactive = False

    def __init__(self, config: PolicyConfig | None = None, rng=None,
                 workflow: WorkflowConfig | None = None):
        self.config = config or PolicyConfig()
        self.workflow = workflow or WorkflowConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self._retry_answers = list(self.config.retry_answers)
        self._jogs = [tuple(j) for j in self.config.jogs]

    def decide_retry(self, context: PromptContext) -> OperatorDecision:
        if self._retry_answers:
            answer = str(self._retry_answers.pop(0)).lower()
            kind = "retry_yes" if answer in ("yes", "y", "retry_yes", "true") else "retry_no"
        else:
            kind = ("retry_yes"
                    if float(self.rng.uniform()) < self.config.p_retry_yes
                    else "retry_no")
        return OperatorDecision(kind=kind)

    def decide_jog(self, context: PromptContext) -> OperatorDecision | None:
        """Explicit scripted jog, or None for let-the-runner-model-the-eyes."""
        if self._jogs:
            return OperatorDecision(kind="manual_jog", jog_mm=self._jogs.pop(0))
        return None

    def review_edge(self, estimated_mm: float, true_mm: float) -> float | None:
        """Operator watching the scan flags a clearly false edge.

        Returns the corrected edge position (with a small reading error) or
        None when the estimate looks plausible.
        """
        if not self.config.auto_correct_false_edges:
            return None
        if abs(estimated_mm - true_mm) <= self.workflow.false_edge_threshold_mm:
            return None
        return true_mm + float(self.rng.normal(0.0, 0.05))

    def acknowledge(self, kind: str) -> OperatorDecision:
        return OperatorDecision(kind=kind)


class ReplayPolicy:
    """Feeds back the decision stream recorded in an event log."""

    interactive = False

    def __init__(self, decisions: Sequence[dict]):
        self._decisions = list(decisions)

    def _pop(self, expected_kinds) -> dict:
        if not self._decisions:
            raise InvalidArgumentError("replay exhausted its decision stream")
        entry = self._decisions.pop(0)
        if entry["kind"] not in expected_kinds:
            raise InvalidArgumentError(
                f"replay expected {expected_kinds}, log has {entry['kind']!r}")
        return entry

    def decide_retry(self, context: PromptContext) -> OperatorDecision:
        entry = self._pop(("retry_yes", "retry_no"))
        return OperatorDecision(kind=entry["kind"])

    def decide_jog(self, context: PromptContext) -> OperatorDecision | None:
        entry = self._pop(("manual_jog",))
        return OperatorDecision(kind="manual_jog", jog_mm=tuple(entry["jog_mm"]))

    def review_edge(self, estimated_mm: float, true_mm: float) -> float | None:
        if self._decisions and self._decisions[0]["kind"] == "false_edge_correction":
            return float(self._decisions.pop(0)["corrected_edge_mm"])
        return None

    def acknowledge(self, kind: str) -> OperatorDecision:
        self._pop((kind,))
        return OperatorDecision(kind=kind)


class InteractivePolicy:
    """Queue-backed policy for serve mode: prompts out, decisions in.

    The procedure thread blocks on the decision queue while the console
    answers; the serve layer owns both queues.
    """

    interactive = True

    def __init__(self, prompt_queue: Queue | None = None,
                 decision_queue: Queue | None = None,
                 workflow: WorkflowConfig | None = None,
                 timeout_s: float | None = None):
        self.prompts: Queue = prompt_queue or Queue()
        self.decisions: Queue = decision_queue or Queue()
        self.workflow = workflow or WorkflowConfig()
        self.timeout_s = timeout_s

    def _await(self, context: PromptContext, expected_kinds) -> OperatorDecision:
        self.prompts.put(context)
        while True:
            try:
                decision = self.decisions.get(timeout=self.timeout_s)
            except Empty:
                raise InvalidArgumentError(
                    f"no operator decision for {context.kind} prompt") from None
            if decision.kind in expected_kinds:
                return decision
            # wrong-kind decisions are rejected by the serve layer before
            # they reach the queue; drop defensively
            continue

    def decide_retry(self, context: PromptContext) -> OperatorDecision:
        return self._await(context, ("retry_yes", "retry_no"))

    def decide_jog(self, context: PromptContext) -> OperatorDecision | None:
        return self._await(context, ("manual_jog",))

    def review_edge(self, estimated_mm: float, true_mm: float) -> float | None:
        return None  # live operator reviews via the console instead

    def acknowledge(self, kind: str) -> OperatorDecision:
        return self._await(
            PromptContext(kind=kind, suture_index=0, vessel_side="right"),
            (kind,),
        )
