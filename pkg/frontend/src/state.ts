// Console state: a pure reducer over server messages plus decision
// submission with exactly-once semantics.
//
// Invariants mirrored from the server:
//   - at most one outstanding prompt at a time;
//   - a decision references the prompt_seq it answers;
//   - duplicate submissions are swallowed locally (and the server acks
//     them idempotently if they do get through);
//   - a stale ack simply waits for the snapshot re-sync that follows it;
//   - a fresh StateSnapshot fully restores the view after reconnect.

import {
  AScanPayload,
  CameraPayload,
  DecisionKind,
  DecisionMessage,
  PromptPayload,
  ReportPayload,
  ServerMessage,
  buildDecision,
} from "./protocol.js";

export interface ConsoleState {
  connected: boolean;
  procedure: {
    phase: string;
    suture_index: number;
    vessel_side: string;
    t_ms: number;
  } | null;
  prompt: PromptPayload | null;
  pendingSeq: number | null;
  answeredSeqs: number[];
  ascan: AScanPayload | null;
  camera: CameraPayload | null;
  report: ReportPayload | null;
  error: string | null;
  feed: string[];
}

export const FEED_LIMIT = 50;

export function initialState(): ConsoleState {
  return {
    connected: false,
    procedure: null,
    prompt: null,
    pendingSeq: null,
    answeredSeqs: [],
    ascan: null,
    camera: null,
    report: null,
    error: null,
    feed: [],
  };
}

function pushFeed(feed: string[], line: string): string[] {
  const next = [...feed, line];
  return next.length > FEED_LIMIT ? next.slice(next.length - FEED_LIMIT) : next;
}

function isAnswered(state: ConsoleState, seq: number): boolean {
  return state.answeredSeqs.includes(seq);
}

export function applyMessage(state: ConsoleState, msg: ServerMessage): ConsoleState {
  switch (msg.kind) {
    case "StateSnapshot": {
      const p = msg.payload;
      const prompt =
        p.outstanding_prompt && !isAnswered(state, p.outstanding_prompt.prompt_seq)
          ? p.outstanding_prompt
          : null;
      return {
        ...state,
        procedure: p.state,
        prompt,
        ascan: p.last_ascan ?? state.ascan,
        camera: p.last_camera ?? state.camera,
        report: p.report,
        error: p.error,
      };
    }
    case "Prompt": {
      if (isAnswered(state, msg.payload.prompt_seq)) return state;
      return {
        ...state,
        prompt: msg.payload,
        feed: pushFeed(
          state.feed,
          `prompt #${msg.payload.prompt_seq}: ${msg.payload.kind} ` +
            `(suture ${msg.payload.suture_index}, ${msg.payload.vessel_side})`,
        ),
      };
    }
    case "AScanFrame":
      return { ...state, ascan: msg.payload };
    case "CameraPair":
      return {
        ...state,
        camera: msg.payload,
        feed: pushFeed(
          state.feed,
          `vision verdict: ${msg.payload.verdict} ` +
            `(suture ${msg.payload.suture_index}, ${msg.payload.side})`,
        ),
      };
    case "Ack": {
      const { prompt_seq, status, reason } = msg.payload;
      const feed = pushFeed(state.feed, `ack #${prompt_seq}: ${status}${reason ? ` (${reason})` : ""}`);
      if (status === "accepted") {
        const prompt = state.prompt?.prompt_seq === prompt_seq ? null : state.prompt;
        return {
          ...state,
          prompt,
          pendingSeq: null,
          answeredSeqs: [...state.answeredSeqs, prompt_seq],
          feed,
        };
      }
      if (status === "duplicate") {
        // already answered; nothing is re-delivered
        return { ...state, pendingSeq: null, feed };
      }
      if (status === "stale") {
        // the server re-syncs with a snapshot right after this ack
        return { ...state, pendingSeq: null, feed };
      }
      // rejected: the prompt stays outstanding so the operator can retry
      return { ...state, pendingSeq: null, feed };
    }
  }
}

export interface SubmitResult {
  state: ConsoleState;
  message: DecisionMessage | null;
  blocked?: string;
}

/** Build the Decision for the outstanding prompt; exactly-once per seq. */
export function submitDecision(
  state: ConsoleState,
  kind: DecisionKind,
  jogMm?: [number, number, number],
): SubmitResult {
  const prompt = state.prompt;
  if (!prompt) {
    return { state, message: null, blocked: "no outstanding prompt" };
  }
  if (state.pendingSeq === prompt.prompt_seq) {
    return { state, message: null, blocked: "decision already in flight" };
  }
  if (isAnswered(state, prompt.prompt_seq)) {
    return { state, message: null, blocked: "prompt already answered" };
  }
  if (!prompt.accepts.includes(kind)) {
    return {
      state,
      message: null,
      blocked: `prompt accepts ${prompt.accepts.join(", ")}, not ${kind}`,
    };
  }
  const message = buildDecision(prompt.prompt_seq, kind, jogMm);
  return { state: { ...state, pendingSeq: prompt.prompt_seq }, message };
}

export function markConnected(state: ConsoleState, connected: boolean): ConsoleState {
  if (state.connected === connected) return state;
  return {
    ...state,
    connected,
    feed: pushFeed(state.feed, connected ? "connected" : "connection lost"),
  };
}
