import json

import pytest
from starlette.testclient import TestClient

from suturesim.config import GlobalConfig
from suturesim.serve import create_app


def serve_config(seed=7, n_sutures=1):
    config = GlobalConfig(seed=seed)
    config.workflow.n_sutures = n_sutures
    config.devices.tool.miss_probability = 0.0
    config.vision.detector.sensitivity = 1.0
    config.vision.detector.specificity = 1.0
    return config


def recv_until(ws, predicate, limit=400):
    """Drain console messages until one satisfies the predicate."""
    for _ in range(limit):
        message = json.loads(ws.receive_text())
        if predicate(message):
            return message
    raise AssertionError("expected message never arrived")


def next_prompt(ws, kind=None):
    return recv_until(
        ws, lambda m: m["kind"] == "Prompt"
        and (kind is None or m["payload"]["kind"] == kind))


def send_decision(ws, prompt_seq, kind, jog_mm=None):
    decision = {"kind": kind}
    if jog_mm is not None:
        decision["jog_mm"] = jog_mm
    ws.send_text(json.dumps({"v": 1, "kind": "Decision",
                             "payload": {"prompt_seq": prompt_seq,
                                         "decision": decision}}))


def answer(ws, kind=None, decision_kind=None, jog_mm=None):
    prompt = next_prompt(ws, kind)
    send_decision(ws, prompt["payload"]["prompt_seq"],
                  decision_kind or prompt["payload"]["kind"], jog_mm=jog_mm)
    ack = recv_until(ws, lambda m: m["kind"] == "Ack")
    return prompt, ack


class TestConsoleRoundTrip:
    def test_missed_prompt_retry_yes_causes_redrive(self):
        config = serve_config()
        scenario = {"forced_misses": [[1, "right"]]}
        app = create_app(config, scenario=scenario, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                first = json.loads(ws.receive_text())
                assert first["kind"] == "StateSnapshot"
                assert first["v"] == 1

                _, ack = answer(ws, kind="vessels_loaded")
                assert ack["payload"]["status"] == "accepted"

                prompt, ack = answer(ws, kind="retry", decision_kind="retry_yes")
                assert prompt["payload"]["vessel_side"] == "right"
                assert ack["payload"]["status"] == "accepted"

                # the controller re-enters capture_before for the same side
                snapshot = recv_until(
                    ws, lambda m: m["kind"] == "StateSnapshot"
                    and m["payload"]["state"]["phase"] == "capture_before"
                    and m["payload"]["state"]["vessel_side"] == "right")
                assert snapshot["payload"]["state"]["suture_index"] == 1

                # the re-drive is visible as a fresh camera pair with a
                # success verdict
                camera = recv_until(
                    ws, lambda m: m["kind"] == "CameraPair"
                    and m["payload"]["verdict"] == "success"
                    and m["payload"]["side"] == "right")
                assert camera["payload"]["after"]["size"] == 64

                answer(ws, kind="pull_cut_done")
                answer(ws, kind="tie_off_done")
                done = recv_until(
                    ws, lambda m: m["kind"] == "StateSnapshot"
                    and m["payload"]["state"]["phase"] == "done")
                assert done["payload"]["state"]["phase"] == "done"

    def test_jog_after_failed_edge_scans_resumes(self):
        config = serve_config(seed=9)
        scenario = {"true_edge_overrides": {"1:right": 12.0}}
        app = create_app(config, scenario=scenario, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                answer(ws, kind="vessels_loaded")
                prompt, ack = answer(ws, kind="jog", decision_kind="manual_jog",
                                     jog_mm=[10.5, 0.0, 0.0])
                assert ack["payload"]["status"] == "accepted"
                # scanning resumes from the jogged position and finds the edge
                ascan = recv_until(
                    ws, lambda m: m["kind"] == "AScanFrame"
                    and m["payload"]["side"] == "right")
                assert ascan["payload"]["edge_position_mm"] == pytest.approx(
                    12.0, abs=0.3)
                answer(ws, kind="pull_cut_done")
                answer(ws, kind="tie_off_done")
                recv_until(ws, lambda m: m["kind"] == "StateSnapshot"
                           and m["payload"]["state"]["phase"] == "done")

    def test_duplicate_decision_idempotent(self):
        config = serve_config(seed=11)
        scenario = {"forced_misses": [[1, "right"]]}
        app = create_app(config, scenario=scenario, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                answer(ws, kind="vessels_loaded")
                prompt = next_prompt(ws, kind="retry")
                seq = prompt["payload"]["prompt_seq"]
                send_decision(ws, seq, "retry_yes")
                ack1 = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack1["payload"]["status"] == "accepted"
                # duplicate: acknowledged, not delivered again
                send_decision(ws, seq, "retry_yes")
                ack2 = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack2["payload"]["status"] == "duplicate"
                # exactly one retry took place: 3 drives total for suture 1
                answer(ws, kind="pull_cut_done")
                answer(ws, kind="tie_off_done")
                done = recv_until(
                    ws, lambda m: m["kind"] == "StateSnapshot"
                    and m["payload"]["report"] is not None)
                assert done["payload"]["report"]["intervention_count"] == 1

    def test_wrong_kind_rejected(self):
        config = serve_config(seed=9)
        scenario = {"true_edge_overrides": {"1:right": 12.0}}
        app = create_app(config, scenario=scenario, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                answer(ws, kind="vessels_loaded")
                prompt = next_prompt(ws, kind="jog")
                seq = prompt["payload"]["prompt_seq"]
                # retry answer sent to a jog prompt: rejected, prompt stays
                send_decision(ws, seq, "retry_yes")
                ack = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack["payload"]["status"] == "rejected"
                send_decision(ws, seq, "manual_jog", jog_mm=[10.5, 0.0, 0.0])
                ack = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack["payload"]["status"] == "accepted"

    def test_stale_decision_resyncs(self):
        config = serve_config(seed=13)
        app = create_app(config, scenario=None, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                prompt = next_prompt(ws, kind="vessels_loaded")
                send_decision(ws, 999999, "vessels_loaded")
                ack = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack["payload"]["status"] == "stale"
                # re-sync snapshot still carries the outstanding prompt
                snapshot = recv_until(ws, lambda m: m["kind"] == "StateSnapshot")
                outstanding = snapshot["payload"]["outstanding_prompt"]
                assert outstanding is not None
                assert outstanding["prompt_seq"] == prompt["payload"]["prompt_seq"]

    def test_reconnect_gets_snapshot_with_outstanding_prompt(self):
        config = serve_config(seed=17)
        app = create_app(config, scenario=None, time_scale=0.0)
        with TestClient(app) as client:
            with client.websocket_connect("/ws") as ws:
                prompt = next_prompt(ws, kind="vessels_loaded")
                seq = prompt["payload"]["prompt_seq"]
            # connection dropped without answering; a fresh connection must
            # restore the full view including the pending prompt
            with client.websocket_connect("/ws") as ws:
                snapshot = recv_until(
                    ws, lambda m: m["kind"] == "StateSnapshot"
                    and m["payload"]["outstanding_prompt"] is not None)
                assert snapshot["payload"]["outstanding_prompt"]["prompt_seq"] == seq
                send_decision(ws, seq, "vessels_loaded")
                ack = recv_until(ws, lambda m: m["kind"] == "Ack")
                assert ack["payload"]["status"] == "accepted"

    def test_health_endpoint(self):
        app = create_app(serve_config(), time_scale=0.0)
        with TestClient(app) as client:
            response = client.get("/health")
            assert response.status_code == 200
            assert response.json()["ok"] is True

    def test_index_served(self):
        app = create_app(serve_config(), time_scale=0.0)
        with TestClient(app) as client:
            response = client.get("/")
            assert response.status_code == 200
            assert "console" in response.text.lower()
