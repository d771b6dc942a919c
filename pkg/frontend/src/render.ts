// DOM rendering: paints the current ConsoleState into the page. Kept
// thin; everything interesting lives in the pure modules.

import { decimate, thresholdY, toPolyline } from "./chart.js";
import { decodeBase64, grayToRgba } from "./frames.js";
import { DecisionKind } from "./protocol.js";
import { ConsoleState } from "./state.js";

export interface RenderTargets {
  phase: HTMLElement;
  suture: HTMLElement;
  side: HTMLElement;
  clock: HTMLElement;
  status: HTMLElement;
  promptBox: HTMLElement;
  promptButtons: HTMLElement;
  jogInput: HTMLInputElement;
  ascanCanvas: HTMLCanvasElement;
  ascanLabel: HTMLElement;
  beforeCanvas: HTMLCanvasElement;
  afterCanvas: HTMLCanvasElement;
  verdict: HTMLElement;
  feed: HTMLElement;
  report: HTMLElement;
}

const BUTTON_LABELS: Record<DecisionKind, string> = {
  retry_yes: "Retry suture",
  retry_no: "Proceed without retry",
  manual_jog: "Apply jog",
  vessels_loaded: "Vessels loaded",
  pull_cut_done: "Pull & cut done",
  tie_off_done: "Tie-off done",
};

export function renderState(
  state: ConsoleState,
  targets: RenderTargets,
  onDecision: (kind: DecisionKind, jog?: [number, number, number]) => void,
): void {
  const procedure = state.procedure;
  targets.phase.textContent = procedure ? procedure.phase : "-";
  targets.suture.textContent = procedure ? String(procedure.suture_index) : "-";
  targets.side.textContent = procedure ? procedure.vessel_side : "-";
  targets.clock.textContent = procedure
    ? `${(procedure.t_ms / 1000).toFixed(1)} s`
    : "-";
  targets.status.textContent = state.connected ? "connected" : "reconnecting...";
  targets.status.className = state.connected ? "ok" : "warn";

  renderPrompt(state, targets, onDecision);
  renderAscan(state, targets);
  renderCamera(state, targets);

  targets.feed.textContent = state.feed.slice(-12).join("\n");
  if (state.error) {
    targets.report.textContent = `error: ${state.error}`;
  } else if (state.report) {
    const r = state.report;
    targets.report.textContent =
      `done: ${r.time_per_stitch_s.toFixed(1)} s/stitch, ` +
      `autonomy ${(r.autonomy_fraction * 100).toFixed(1)}%, ` +
      `${r.intervention_count} interventions, ` +
      `${r.disconnect_count} disconnects` +
      (r.crossed_stitch ? ", crossed stitch flagged" : "");
  } else {
    targets.report.textContent = "";
  }
}

function renderPrompt(
  state: ConsoleState,
  targets: RenderTargets,
  onDecision: (kind: DecisionKind, jog?: [number, number, number]) => void,
): void {
  const prompt = state.prompt;
  targets.promptButtons.replaceChildren();
  if (!prompt) {
    targets.promptBox.classList.remove("active");
    targets.promptBox.querySelector(".prompt-text")!.textContent =
      "No operator action needed.";
    targets.jogInput.style.display = "none";
    return;
  }
  targets.promptBox.classList.add("active");
  const text =
    prompt.kind === "retry"
      ? `Missed suture detected (suture ${prompt.suture_index}, ${prompt.vessel_side}). Try again?`
      : prompt.kind === "jog"
        ? `Edge not found after retries (suture ${prompt.suture_index}, ${prompt.vessel_side}). Jog the scanner (mm):`
        : `Confirm: ${prompt.kind.replace(/_/g, " ")}`;
  targets.promptBox.querySelector(".prompt-text")!.textContent = text;
  targets.jogInput.style.display = prompt.kind === "jog" ? "inline-block" : "none";
  const pending = state.pendingSeq === prompt.prompt_seq;
  for (const kind of prompt.accepts) {
    const button = document.createElement("button");
    button.textContent = BUTTON_LABELS[kind];
    button.disabled = pending;
    button.onclick = () => {
      if (kind === "manual_jog") {
        const dx = parseFloat(targets.jogInput.value || "0");
        onDecision(kind, [Number.isFinite(dx) ? dx : 0, 0, 0]);
      } else {
        onDecision(kind);
      }
    };
    targets.promptButtons.appendChild(button);
  }
}

function renderAscan(state: ConsoleState, targets: RenderTargets): void {
  const canvas = targets.ascanCanvas;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const ascan = state.ascan;
  if (!ascan) {
    targets.ascanLabel.textContent = "no scan yet";
    return;
  }
  targets.ascanLabel.textContent =
    `suture ${ascan.suture_index} ${ascan.side}: edge at ` +
    `${ascan.edge_position_mm.toFixed(2)} mm (${ascan.transition})`;

  const points = decimate(ascan.samples, 512);
  const polyline = toPolyline(points, {
    width: canvas.width,
    height: canvas.height,
    nSamples: ascan.samples.length,
  });
  ctx.strokeStyle = "#58a6ff";
  ctx.lineWidth = 1.2;
  ctx.beginPath();
  polyline.split(" ").forEach((pair, i) => {
    const [x, y] = pair.split(",").map(Number);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();

  for (const [tau, color, label] of [
    [ascan.tau_air, "#f85149", "tau_air"],
    [ascan.tau_rmse, "#d29922", "tau_rmse"],
  ] as const) {
    const y = thresholdY(tau, canvas.height);
    ctx.strokeStyle = color;
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(canvas.width, y);
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = color;
    ctx.font = "10px monospace";
    ctx.fillText(label, 4, y - 3);
  }
}

function paintFrame(
  canvas: HTMLCanvasElement,
  frame: { size: number; pixels_b64: string } | null,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!frame) return;
  const gray = decodeBase64(frame.pixels_b64);
  const rgba = grayToRgba(gray, frame.size);
  const image = new ImageData(rgba, frame.size, frame.size);
  createImageBitmap(image).then((bitmap) => {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
  });
}

function renderCamera(state: ConsoleState, targets: RenderTargets): void {
  const camera = state.camera;
  paintFrame(targets.beforeCanvas, camera?.before ?? null);
  paintFrame(targets.afterCanvas, camera?.after ?? null);
  targets.verdict.textContent = camera
    ? `verdict: ${camera.verdict} (suture ${camera.suture_index}, ${camera.side})`
    : "";
  targets.verdict.className = camera?.verdict === "missed" ? "warn" : "ok";
}
