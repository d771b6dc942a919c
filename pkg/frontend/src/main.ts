// Console entry point: socket + reducer + renderer wiring.

import { parseServerMessage } from "./protocol.js";
import { RenderTargets, renderState } from "./render.js";
import {
  applyMessage,
  initialState,
  markConnected,
  submitDecision,
} from "./state.js";
import { ReconnectingSocket } from "./ws.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const targets: RenderTargets = {
  phase: el("phase"),
  suture: el("suture"),
  side: el("side"),
  clock: el("clock"),
  status: el("status"),
  promptBox: el("prompt-box"),
  promptButtons: el("prompt-buttons"),
  jogInput: el<HTMLInputElement>("jog-input"),
  ascanCanvas: el<HTMLCanvasElement>("ascan-canvas"),
  ascanLabel: el("ascan-label"),
  beforeCanvas: el<HTMLCanvasElement>("before-canvas"),
  afterCanvas: el<HTMLCanvasElement>("after-canvas"),
  verdict: el("verdict"),
  feed: el("feed"),
  report: el("report"),
};

let state = initialState();

const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
const socket = new ReconnectingSocket(wsUrl, {
  onMessage: (raw) => {
    const message = parseServerMessage(raw);
    if (!message) return;
    state = applyMessage(state, message);
    repaint();
  },
  onStatus: (connected) => {
    state = markConnected(state, connected);
    repaint();
  },
});

function repaint(): void {
  renderState(state, targets, (kind, jog) => {
    const result = submitDecision(state, kind, jog);
    state = result.state;
    if (result.message) socket.send(result.message);
    repaint();
  });
}

socket.connect();
repaint();
