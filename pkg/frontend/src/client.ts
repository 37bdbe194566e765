/**
 * Inference client with sequence-numbered last-write-wins submissions.
 *
 * Every submission gets a fresh sequence number; a response is applied only
 * if no newer submission has started since, so the displayed mesh always
 * corresponds to the most recent sketch.
 */

export interface MeshData {
  vertices: number[][];
  faces: number[][];
  timing_ms: number;
  checkpoint_id: string;
}

export interface SubmitResult {
  /** false when a newer submission superseded this one */
  applied: boolean;
  mesh?: MeshData;
  error?: string;
  seq: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class InferenceClient {
  private seq = 0;
  private appliedSeq = 0;

  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  get lastAppliedSeq(): number {
    return this.appliedSeq;
  }

  async health(): Promise<{ status: string; checkpoint: string }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/health`);
    if (!resp.ok) throw new Error(`health check failed: ${resp.status}`);
    return resp.json();
  }

  async submit(png: Uint8Array): Promise<SubmitResult> {
    const mySeq = ++this.seq;
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}/api/infer`, {
        method: "POST",
        headers: { "content-type": "image/png" },
        body: png as unknown as BodyInit,
      });
    } catch (err) {
      return { applied: false, error: String(err), seq: mySeq };
    }
    if (mySeq !== this.seq || mySeq < this.appliedSeq) {
      return { applied: false, seq: mySeq };   // superseded while in flight
    }
    if (!resp.ok) {
      let reason = `HTTP ${resp.status}`;
      try {
        const body = await resp.json();
        if (body && body.error) reason = `${reason}: ${body.error}`;
      } catch {
        /* opaque body */
      }
      return { applied: false, error: reason, seq: mySeq };
    }
    const mesh = (await resp.json()) as MeshData;
    if (mySeq !== this.seq) {
      return { applied: false, seq: mySeq };   // superseded during body read
    }
    this.appliedSeq = mySeq;
    return { applied: true, mesh, seq: mySeq };
  }
}
