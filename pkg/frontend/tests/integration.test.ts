/**
 * Live round trip against the Python inference service: rasterize a drawn
 * circle, POST it, and verify the mesh comes back fast with the sequencing
 * contract holding under rapid double submission.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { InferenceClient } from "../src/client";
import { encodeGrayPng } from "../src/png";
import { StrokeBuffer } from "../src/strokes";

const PORT = 8765 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const MODEL_INPUT = 128;

let server: ChildProcess | null = null;

function drawCircle(buf: StrokeBuffer): void {
  buf.beginStroke(256 + 110, 256);
  for (let a = 1; a <= 72; a++) {
    const t = (a / 72) * 2 * Math.PI;
    buf.extendStroke(256 + 110 * Math.cos(t), 256 + 110 * Math.sin(t));
  }
  buf.endStroke();
}

async function waitForHealth(client: InferenceClient, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastErr: unknown = null;
  while (Date.now() < deadline) {
    try {
      await client.health();
      return;
    } catch (err) {
      lastErr = err;
      await new Promise((r) => setTimeout(r, 300));
    }
  }
  throw new Error(`service did not come up on ${BASE}: ${lastErr}`);
}

beforeAll(async () => {
  const work = mkdtempSync(join(tmpdir(), "studio-it-"));
  const data = join(work, "data");
  const run = join(work, "run");
  const gen = spawnSync("python3", ["-m", "sketch3d.cli", "gen-data", "--out", data,
    "--categories", "2", "--per-category", "2", "--resolution", "128",
    "--seed", "3"], { stdio: "inherit" });
  if (gen.status !== 0) throw new Error("gen-data failed");
  const tr = spawnSync("python3", ["-m", "sketch3d.cli", "train", "--data", data,
    "--out", run, "--steps", "1", "--batch-size", "1", "--resolutions", "32,64",
    "--no-sd", "--log-every", "1"], { stdio: "inherit" });
  if (tr.status !== 0) throw new Error("train --steps 1 failed");
  server = spawn("python3", ["-m", "sketch3d.cli", "serve", "--ckpt",
    join(run, "checkpoint.sk3d"), "--port", String(PORT)], { stdio: "ignore" });
  await waitForHealth(new InferenceClient(BASE), 60000);
}, 180000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("studio round trip", () => {
  it("draw -> rasterize -> POST -> mesh in under a second", async () => {
    const strokes = new StrokeBuffer(512);
    drawCircle(strokes);
    const pixels = strokes.rasterize(MODEL_INPUT);
    expect(new Set(pixels).size).toBeLessThanOrEqual(2);   // strictly bilevel
    const png = encodeGrayPng(pixels, MODEL_INPUT, MODEL_INPUT);

    const client = new InferenceClient(BASE);
    const t0 = Date.now();
    const result = await client.submit(png);
    const elapsed = Date.now() - t0;
    expect(result.applied).toBe(true);
    expect(result.mesh!.vertices.length).toBe(642);
    expect(result.mesh!.faces.length).toBe(1280);
    expect(elapsed).toBeLessThan(1000);
  }, 30000);

  it("identical resubmission returns the identical mesh (stateless server)", async () => {
    const strokes = new StrokeBuffer(512);
    drawCircle(strokes);
    const png = encodeGrayPng(strokes.rasterize(MODEL_INPUT), MODEL_INPUT, MODEL_INPUT);
    const client = new InferenceClient(BASE);
    const a = await client.submit(png);
    const b = await client.submit(png);
    expect(a.mesh!.vertices).toEqual(b.mesh!.vertices);
  }, 30000);

  it("rapid double submission displays only the latest response", async () => {
    const a = new StrokeBuffer(512);
    drawCircle(a);
    const b = new StrokeBuffer(512);
    b.beginStroke(150, 150);
    for (let i = 0; i < 40; i++) b.extendStroke(150 + i * 5, 150 + i * 3);
    b.endStroke();
    const pngA = encodeGrayPng(a.rasterize(MODEL_INPUT), MODEL_INPUT, MODEL_INPUT);
    const pngB = encodeGrayPng(b.rasterize(MODEL_INPUT), MODEL_INPUT, MODEL_INPUT);

    const client = new InferenceClient(BASE);
    const [first, second] = await Promise.all([client.submit(pngA), client.submit(pngB)]);
    expect(second.applied).toBe(true);
    expect(client.lastAppliedSeq).toBe(second.seq);
    expect(first.applied).toBe(false);

    // the latest response matches what submitting B alone produces
    const alone = await client.submit(pngB);
    expect(second.mesh!.vertices).toEqual(alone.mesh!.vertices);
  }, 30000);
});
