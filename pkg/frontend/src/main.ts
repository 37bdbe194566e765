/**
 * Studio wiring: drawing canvas -> debounced submit -> mesh viewer.
 */

import { InferenceClient } from "./client.js";
import { encodeGrayPng } from "./png.js";
import { StrokeBuffer } from "./strokes.js";
import { ViewerState, draw } from "./viewer.js";

const CANVAS_SIZE = 512;
const MODEL_INPUT = 128;
const DEBOUNCE_MS = 300;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const drawCanvas = el<HTMLCanvasElement>("draw");
const viewCanvas = el<HTMLCanvasElement>("view");
const statusBox = el<HTMLDivElement>("status");
const submitBtn = el<HTMLButtonElement>("submit");
const undoBtn = el<HTMLButtonElement>("undo");
const clearBtn = el<HTMLButtonElement>("clear");
const styleBtn = el<HTMLButtonElement>("style");
const baseUrlInput = el<HTMLInputElement>("baseurl");

baseUrlInput.value = window.location.origin.startsWith("http")
  ? window.location.origin
  : "http://127.0.0.1:8008";

const strokes = new StrokeBuffer(CANVAS_SIZE);
const viewer = new ViewerState();
const client = new InferenceClient(baseUrlInput.value);
baseUrlInput.addEventListener("change", () => {
  client.baseUrl = baseUrlInput.value.replace(/\/$/, "");
});

const dctx = drawCanvas.getContext("2d")!;
const vctx = viewCanvas.getContext("2d")!;

function repaintStrokes(): void {
  dctx.fillStyle = "#ffffff";
  dctx.fillRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
  dctx.strokeStyle = "#101010";
  dctx.lineCap = "round";
  dctx.lineJoin = "round";
  for (const stroke of strokes.snapshot()) {
    dctx.lineWidth = stroke.width;
    dctx.beginPath();
    stroke.points.forEach((p, i) =>
      i === 0 ? dctx.moveTo(p.x, p.y) : dctx.lineTo(p.x, p.y));
    dctx.stroke();
  }
  submitBtn.disabled = strokes.isEmpty;
}

function toast(message: string, isError = false): void {
  statusBox.textContent = message;
  statusBox.className = isError ? "status error" : "status";
}

let debounceTimer: number | undefined;

async function submitNow(): Promise<void> {
  if (strokes.isEmpty) return;   // empty buffer: submission disabled, no request
  const png = encodeGrayPng(strokes.rasterize(MODEL_INPUT), MODEL_INPUT, MODEL_INPUT);
  toast("inferring…");
  const result = await client.submit(png);
  if (!result.applied) {
    if (result.error) toast(result.error, true);
    return;   // superseded or failed: keep current mesh and canvas
  }
  viewer.setMesh(result.mesh!);
  toast(`mesh: ${result.mesh!.vertices.length} vertices, ` +
        `${result.mesh!.faces.length} faces (${result.mesh!.timing_ms.toFixed(1)} ms)`);
}

function scheduleSubmit(): void {
  window.clearTimeout(debounceTimer);
  debounceTimer = window.setTimeout(() => void submitNow(), DEBOUNCE_MS);
}

// drawing events
let drawing = false;
drawCanvas.addEventListener("pointerdown", (ev) => {
  drawing = true;
  drawCanvas.setPointerCapture(ev.pointerId);
  const r = drawCanvas.getBoundingClientRect();
  strokes.beginStroke(ev.clientX - r.left, ev.clientY - r.top);
  repaintStrokes();
});
drawCanvas.addEventListener("pointermove", (ev) => {
  if (!drawing) return;
  const r = drawCanvas.getBoundingClientRect();
  strokes.extendStroke(ev.clientX - r.left, ev.clientY - r.top);
  repaintStrokes();
});
drawCanvas.addEventListener("pointerup", () => {
  if (!drawing) return;
  drawing = false;
  strokes.endStroke();
  repaintStrokes();
  scheduleSubmit();
});

submitBtn.addEventListener("click", () => void submitNow());
undoBtn.addEventListener("click", () => {
  strokes.undo();
  repaintStrokes();
  if (!strokes.isEmpty) scheduleSubmit();
});
clearBtn.addEventListener("click", () => {
  strokes.clear();
  repaintStrokes();
});
styleBtn.addEventListener("click", () => viewer.toggleStyle());

// viewer orbit / zoom
let orbiting = false;
let lastX = 0;
let lastY = 0;
viewCanvas.addEventListener("pointerdown", (ev) => {
  orbiting = true;
  lastX = ev.clientX;
  lastY = ev.clientY;
  viewCanvas.setPointerCapture(ev.pointerId);
});
viewCanvas.addEventListener("pointermove", (ev) => {
  if (!orbiting) return;
  viewer.orbit((ev.clientX - lastX) * 0.5, (ev.clientY - lastY) * 0.5);
  lastX = ev.clientX;
  lastY = ev.clientY;
});
viewCanvas.addEventListener("pointerup", () => {
  orbiting = false;
});
viewCanvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  viewer.zoom(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
});

function frame(): void {
  draw(viewer, vctx, viewCanvas.width);
  requestAnimationFrame(frame);
}

repaintStrokes();
toast("draw a sketch; it submits automatically");
void client.health().then(
  (h) => toast(`connected to checkpoint ${h.checkpoint}`),
  () => toast("service unreachable; set the base URL and draw anyway", true),
);
requestAnimationFrame(frame);
