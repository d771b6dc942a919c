"""Operator console server: the procedure runs in a worker thread while a
WebSocket connection streams state snapshots, A-scan traces, and camera
pairs to the browser and carries operator decisions back.

Message schema (version field v = 1):
  server -> client: StateSnapshot | AScanFrame | CameraPair | Prompt | Ack
  client -> server: Decision {prompt_seq, decision {kind, jog_mm?}}

At most one prompt is outstanding; a Decision must reference its seq.
Duplicate decisions are acknowledged idempotently without re-delivery;
stale ones are rejected and answered with a fresh snapshot re-sync.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .config import GlobalConfig
from .controller import InteractivePolicy, OperatorDecision
from .errors import InvalidArgumentError
from .runner import ProcedureRunner

PROTOCOL_VERSION = 1

_PROMPT_ACCEPTS = {
    "retry": ("retry_yes", "retry_no"),
    "jog": ("manual_jog",),
    "vessels_loaded": ("vessels_loaded",),
    "pull_cut_done": ("pull_cut_done",),
    "tie_off_done": ("tie_off_done",),
}


class ConsoleBridge:
    """Bookkeeping between the procedure thread and the websocket."""

    def __init__(self, config: GlobalConfig, scenario: dict | None,
                 time_scale: float):
        self.config = config
        self.scenario = scenario or {}
        self.time_scale = time_scale
        self.policy = InteractivePolicy(workflow=config.workflow)
        self.outbound: queue.Queue = queue.Queue()
        self._seq = 0
        self._lock = threading.RLock()
        self.outstanding: dict | None = None
        self.answered: set[int] = set()
        self.last_state: dict = {"phase": "load_vessels", "suture_index": 1,
                                 "vessel_side": "right", "t_ms": 0.0}
        self.last_ascan: dict | None = None
        self.last_camera: dict | None = None
        self.report: dict | None = None
        self.error: str | None = None
        self.thread: threading.Thread | None = None

    # -- message plumbing ---------------------------------------------------

    def _next_seq(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def _emit(self, kind: str, payload: dict) -> dict:
        message = {"v": PROTOCOL_VERSION, "kind": kind, "seq": self._next_seq(),
                   "logical_time": self.last_state.get("t_ms", 0.0),
                   "payload": payload}
        self.outbound.put(message)
        return message

    def snapshot_payload(self) -> dict:
        return {
            "state": self.last_state,
            "outstanding_prompt": self.outstanding,
            "last_ascan": self.last_ascan,
            "last_camera": self.last_camera,
            "report": self.report,
            "error": self.error,
        }

    def emit_snapshot(self) -> None:
        self._emit("StateSnapshot", self.snapshot_payload())

    # -- procedure thread -----------------------------------------------------

    def start(self) -> None:
        if self.thread is not None:
            return
        self.thread = threading.Thread(target=self._run_procedure, daemon=True)
        self.thread.start()

    def _hook(self, kind: str, payload: dict) -> None:
        if kind == "state":
            self.last_state = payload
            self.emit_snapshot()
        elif kind == "ascan":
            self.last_ascan = payload
            self._emit("AScanFrame", payload)
        elif kind == "camera":
            self.last_camera = payload
            self._emit("CameraPair", payload)
        # "prompt" hook events are display-only; authoritative prompts flow
        # through the policy queue (_pump_prompts)

    def _pump_prompts(self) -> None:
        while True:
            context = self.policy.prompts.get()
            if context is None:
                return
            prompt = {
                "prompt_seq": self._next_seq(),
                "kind": context.kind,
                "suture_index": context.suture_index,
                "vessel_side": context.vessel_side,
                "accepts": list(_PROMPT_ACCEPTS.get(context.kind, ())),
                "detail": context.detail,
            }
            self.outstanding = prompt
            self._emit("Prompt", prompt)

    def _run_procedure(self) -> None:
        pump = threading.Thread(target=self._pump_prompts, daemon=True)
        pump.start()
        try:
            runner = ProcedureRunner(self.config, policy=self.policy,
                                     scenario=self.scenario,
                                     snapshot_hook=self._hook)
            if self.time_scale > 0:
                runner.bus.on_advance = lambda ms: time.sleep(
                    ms / 1000.0 * self.time_scale)
            report = runner.run()
            self.report = {
                "time_per_stitch_s": report.time_per_stitch_s,
                "autonomy_fraction": report.autonomy_fraction,
                "intervention_count": report.intervention_count,
                "disconnect_count": report.disconnect_count,
                "crossed_stitch": report.crossed_stitch,
                "trace_hash": report.trace_hash,
            }
        except Exception as exc:  # surfaced on the console
            self.error = f"{type(exc).__name__}: {exc}"
        finally:
            self.policy.prompts.put(None)
            self.emit_snapshot()

    # -- decision handling ------------------------------------------------------

    def handle_decision(self, message: dict) -> None:
        with self._lock:
            self._handle_decision_locked(message)

    def _handle_decision_locked(self, message: dict) -> None:
        payload = message.get("payload") or {}
        prompt_seq = payload.get("prompt_seq")
        decision = payload.get("decision") or {}
        kind = decision.get("kind")

        if prompt_seq in self.answered:
            self._emit("Ack", {"prompt_seq": prompt_seq, "status": "duplicate"})
            return
        if self.outstanding is None or prompt_seq != self.outstanding["prompt_seq"]:
            self._emit("Ack", {"prompt_seq": prompt_seq, "status": "stale"})
            self.emit_snapshot()  # re-sync, outstanding prompt included
            return
        accepts = tuple(self.outstanding.get("accepts", ()))
        if kind not in accepts:
            self._emit("Ack", {"prompt_seq": prompt_seq, "status": "rejected",
                               "reason": f"prompt accepts {list(accepts)}"})
            return
        try:
            jog = None
            if kind == "manual_jog":
                jog = tuple(float(v) for v in decision["jog_mm"])
                limit = self.config.workflow.max_jog_mm
                if any(abs(v) > limit for v in jog):
                    raise InvalidArgumentError(
                        f"jog magnitude exceeds the {limit} mm bound")
            operator_decision = OperatorDecision(kind=kind, jog_mm=jog)
        except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
            self._emit("Ack", {"prompt_seq": prompt_seq, "status": "rejected",
                               "reason": str(exc)})
            return
        self.answered.add(prompt_seq)
        self.outstanding = None
        self.policy.decisions.put(operator_decision)
        self._emit("Ack", {"prompt_seq": prompt_seq, "status": "accepted"})


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>suturesim console</title></head>
<body><h1>suturesim operator console</h1>
<p>Frontend assets not built. Run <code>npm install && npm run build</code>
in the frontend/ directory, or connect to <code>/ws</code> directly.</p>
</body></html>"""


def create_app(config: GlobalConfig | None = None, scenario: dict | None = None,
               time_scale: float = 0.0, frontend_dir: Path | None = None) -> FastAPI:
    config = config or GlobalConfig()
    app = FastAPI(title="suturesim operator console")
    bridge = ConsoleBridge(config, scenario, time_scale)
    app.state.bridge = bridge

    if frontend_dir is None:
        frontend_dir = Path(__file__).resolve().parents[2] / "frontend"
    index_html = frontend_dir / "index.html"
    dist_dir = frontend_dir / "dist"
    if dist_dir.is_dir():
        app.mount("/dist", StaticFiles(directory=dist_dir), name="dist")

    @app.get("/", response_class=HTMLResponse)
    async def index():
        if index_html.exists():
            return HTMLResponse(index_html.read_text())
        return HTMLResponse(_FALLBACK_PAGE)

    @app.get("/health")
    async def health():
        return {"ok": True, "report_ready": bridge.report is not None,
                "error": bridge.error}

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        bridge.start()
        bridge.emit_snapshot()
        if bridge.outstanding is not None:
            bridge._emit("Prompt", bridge.outstanding)

        async def sender():
            last_heartbeat = time.monotonic()
            while True:
                try:
                    message = bridge.outbound.get_nowait()
                    await websocket.send_text(json.dumps(message))
                    continue
                except queue.Empty:
                    pass
                if time.monotonic() - last_heartbeat >= 1.0:
                    last_heartbeat = time.monotonic()
                    await websocket.send_text(json.dumps(
                        {"v": PROTOCOL_VERSION, "kind": "StateSnapshot",
                         "seq": bridge._next_seq(),
                         "logical_time": bridge.last_state.get("t_ms", 0.0),
                         "payload": bridge.snapshot_payload()}))
                await asyncio.sleep(0.005)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    message = json.loads(raw)
                except json.JSONDecodeError:
                    continue
                if message.get("kind") == "Decision":
                    bridge.handle_decision(message)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()

    return app
