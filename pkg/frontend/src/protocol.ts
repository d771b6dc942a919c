// Console wire protocol (version 1).
//
// Server -> client: StateSnapshot | AScanFrame | CameraPair | Prompt | Ack
// Client -> server: Decision {prompt_seq, decision {kind, jog_mm?}}
//
// Every message carries v, kind, seq, logical_time, payload. Parsing is
// defensive: anything that does not look like a v1 message is dropped by
// returning null rather than throwing mid-stream.

export const PROTOCOL_VERSION = 1;

export type PromptKind =
  | "retry"
  | "jog"
  | "vessels_loaded"
  | "pull_cut_done"
  | "tie_off_done";

export type DecisionKind =
  | "retry_yes"
  | "retry_no"
  | "manual_jog"
  | "vessels_loaded"
  | "pull_cut_done"
  | "tie_off_done";

export interface ProcedureStateView {
  phase: string;
  suture_index: number;
  vessel_side: string;
  t_ms: number;
  event?: string | null;
}

export interface PromptPayload {
  prompt_seq: number;
  kind: PromptKind;
  suture_index: number;
  vessel_side: string;
  accepts: DecisionKind[];
  detail?: Record<string, unknown>;
}

export interface AScanPayload {
  suture_index: number;
  side: string;
  edge_position_mm: number;
  transition: string;
  classifications: [number, string][];
  samples: number[];
  depth_per_sample_mm: number;
  tau_air: number;
  tau_rmse: number;
  t_ms: number;
}

export interface FramePayload {
  size: number;
  pixels_b64: string;
}

export interface CameraPayload {
  suture_index: number;
  side: string;
  verdict: string;
  before: FramePayload | null;
  after: FramePayload | null;
  t_ms: number;
}

export interface ReportPayload {
  time_per_stitch_s: number;
  autonomy_fraction: number;
  intervention_count: number;
  disconnect_count: number;
  crossed_stitch: boolean;
  trace_hash: string;
}

export interface SnapshotPayload {
  state: ProcedureStateView;
  outstanding_prompt: PromptPayload | null;
  last_ascan: AScanPayload | null;
  last_camera: CameraPayload | null;
  report: ReportPayload | null;
  error: string | null;
}

export type AckStatus = "accepted" | "duplicate" | "stale" | "rejected";

export interface AckPayload {
  prompt_seq: number;
  status: AckStatus;
  reason?: string;
}

export type ServerMessage =
  | { v: 1; kind: "StateSnapshot"; seq: number; logical_time: number; payload: SnapshotPayload }
  | { v: 1; kind: "AScanFrame"; seq: number; logical_time: number; payload: AScanPayload }
  | { v: 1; kind: "CameraPair"; seq: number; logical_time: number; payload: CameraPayload }
  | { v: 1; kind: "Prompt"; seq: number; logical_time: number; payload: PromptPayload }
  | { v: 1; kind: "Ack"; seq: number; logical_time: number; payload: AckPayload };

export interface DecisionMessage {
  v: 1;
  kind: "Decision";
  payload: {
    prompt_seq: number;
    decision: { kind: DecisionKind; jog_mm?: [number, number, number] };
  };
}

const SERVER_KINDS = new Set([
  "StateSnapshot",
  "AScanFrame",
  "CameraPair",
  "Prompt",
  "Ack",
]);

/** Parse one raw websocket frame; null for anything not a v1 message. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  if (msg.v !== PROTOCOL_VERSION) return null;
  if (typeof msg.kind !== "string" || !SERVER_KINDS.has(msg.kind)) return null;
  if (typeof msg.seq !== "number") return null;
  if (typeof msg.payload !== "object" || msg.payload === null) return null;
  return msg as unknown as ServerMessage;
}

export function buildDecision(
  promptSeq: number,
  kind: DecisionKind,
  jogMm?: [number, number, number],
): DecisionMessage {
  const decision: DecisionMessage["payload"]["decision"] = { kind };
  if (kind === "manual_jog") {
    if (!jogMm) throw new Error("manual_jog requires a jog vector");
    decision.jog_mm = jogMm;
  }
  return { v: 1, kind: "Decision", payload: { prompt_seq: promptSeq, decision } };
}
