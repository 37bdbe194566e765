import { describe, expect, it } from "vitest";

import { FetchLike, InferenceClient, MeshData } from "../src/client";

function meshResponse(tag: number, delayMs: number): FetchLike {
  return async () => {
    await new Promise((r) => setTimeout(r, delayMs));
    const mesh: MeshData = {
      vertices: [[tag, 0, 0]],
      faces: [[0, 0, 0]],
      timing_ms: 1,
      checkpoint_id: "t",
    };
    return new Response(JSON.stringify(mesh), {
      status: 200,
      headers: { "content-type": "application/json" },
    });
  };
}

describe("InferenceClient sequencing", () => {
  it("rapid double submission applies only the latest response", async () => {
    let call = 0;
    const fetchImpl: FetchLike = (url, init) => {
      call += 1;
      return meshResponse(call, call === 1 ? 80 : 5)(url, init);
    };
    const client = new InferenceClient("http://test", fetchImpl);
    const png = new Uint8Array([1]);
    const [first, second] = await Promise.all([client.submit(png), client.submit(png)]);
    expect(second.applied).toBe(true);
    expect(second.mesh!.vertices[0][0]).toBe(2);
    expect(first.applied).toBe(false);       // superseded even though slower
    expect(client.lastAppliedSeq).toBe(second.seq);
  });

  it("single submission applies normally", async () => {
    const client = new InferenceClient("http://test", meshResponse(7, 1));
    const result = await client.submit(new Uint8Array([1]));
    expect(result.applied).toBe(true);
    expect(result.mesh!.vertices[0][0]).toBe(7);
  });

  it("http errors surface a reason and do not apply", async () => {
    const fetchImpl: FetchLike = async () =>
      new Response(JSON.stringify({ error: "blank sketch" }), { status: 400 });
    const client = new InferenceClient("http://test", fetchImpl);
    const result = await client.submit(new Uint8Array([1]));
    expect(result.applied).toBe(false);
    expect(result.error).toContain("400");
    expect(result.error).toContain("blank sketch");
  });

  it("network failure is reported, not thrown", async () => {
    const fetchImpl: FetchLike = async () => {
      throw new Error("ECONNREFUSED");
    };
    const client = new InferenceClient("http://test", fetchImpl);
    const result = await client.submit(new Uint8Array([1]));
    expect(result.applied).toBe(false);
    expect(result.error).toContain("ECONNREFUSED");
  });

  it("health propagates server payload", async () => {
    const fetchImpl: FetchLike = async () =>
      new Response(JSON.stringify({ status: "ok", checkpoint: "abc" }), { status: 200 });
    const client = new InferenceClient("http://test", fetchImpl);
    expect(await client.health()).toEqual({ status: "ok", checkpoint: "abc" });
  });
});
