import { describe, expect, it } from "vitest";

import { buildDecision, parseServerMessage } from "../src/protocol.js";

function frame(kind: string, payload: unknown, seq = 1): string {
  return JSON.stringify({ v: 1, kind, seq, logical_time: 0, payload });
}

describe("parseServerMessage", () => {
  it("accepts well-formed v1 messages", () => {
    const msg = parseServerMessage(frame("Prompt", {
      prompt_seq: 4, kind: "retry", suture_index: 2, vessel_side: "right",
      accepts: ["retry_yes", "retry_no"],
    }));
    expect(msg).not.toBeNull();
    expect(msg!.kind).toBe("Prompt");
  });

  it("drops non-json frames", () => {
    expect(parseServerMessage("{nope")).toBeNull();
  });

  it("drops wrong protocol versions", () => {
    const raw = JSON.stringify({ v: 2, kind: "Ack", seq: 1, payload: {} });
    expect(parseServerMessage(raw)).toBeNull();
  });

  it("drops unknown kinds", () => {
    expect(parseServerMessage(frame("Telemetry", {}))).toBeNull();
  });

  it("drops messages without a payload object", () => {
    const raw = JSON.stringify({ v: 1, kind: "Ack", seq: 1, payload: null });
    expect(parseServerMessage(raw)).toBeNull();
  });
});

describe("buildDecision", () => {
  it("builds a retry decision", () => {
    const msg = buildDecision(7, "retry_yes");
    expect(msg.payload.prompt_seq).toBe(7);
    expect(msg.payload.decision).toEqual({ kind: "retry_yes" });
  });

  it("requires a vector for manual jogs", () => {
    expect(() => buildDecision(7, "manual_jog")).toThrow();
    const msg = buildDecision(7, "manual_jog", [0.5, 0, 0]);
    expect(msg.payload.decision.jog_mm).toEqual([0.5, 0, 0]);
  });
});
