/**
 * Stroke capture and deterministic rasterization.
 *
 * The buffer holds ordered strokes of canvas-space points; rasterization
 * stamps each stroke as a thick polyline onto a square binary grid (0 =
 * stroke, 255 = background), matching the model's input convention. The
 * rasterizer is pure math (no canvas API) so the PNG a client submits is a
 * deterministic function of the stroke list.
 */

export interface StrokePoint {
  x: number;
  y: number;
}

export interface Stroke {
  points: StrokePoint[];
  /** brush width in canvas units */
  width: number;
}

export class StrokeBuffer {
  private strokes: Stroke[] = [];
  private active: Stroke | null = null;

  constructor(readonly canvasSize: number) {}

  get strokeCount(): number {
    return this.strokes.length;
  }

  get isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  beginStroke(x: number, y: number, width = 8): void {
    this.active = { points: [{ x, y }], width };
  }

  extendStroke(x: number, y: number): void {
    if (this.active) this.active.points.push({ x, y });
  }

  endStroke(): void {
    if (this.active) {
      this.strokes.push(this.active);
      this.active = null;
    }
  }

  /** Undo removes exactly the last committed stroke. */
  undo(): void {
    this.strokes.pop();
  }

  clear(): void {
    this.strokes = [];
    this.active = null;
  }

  snapshot(): Stroke[] {
    const all = this.active ? [...this.strokes, this.active] : this.strokes;
    return all.map((s) => ({ width: s.width, points: s.points.map((p) => ({ ...p })) }));
  }

  /**
   * Rasterize to a size x size grid of strictly bilevel bytes
   * (0 = stroke, 255 = background).
   */
  rasterize(size: number): Uint8Array {
    const grid = new Uint8Array(size * size).fill(255);
    const scale = size / this.canvasSize;
    for (const stroke of this.snapshot()) {
      const radius = Math.max(0.5, (stroke.width * scale) / 2);
      const pts = stroke.points.map((p) => ({ x: p.x * scale, y: p.y * scale }));
      for (let i = 0; i < pts.length; i++) {
        const a = pts[i];
        const b = pts[Math.min(i + 1, pts.length - 1)];
        stampSegment(grid, size, a.x, a.y, b.x, b.y, radius);
      }
    }
    return grid;
  }
}

function stampSegment(
  grid: Uint8Array,
  size: number,
  ax: number,
  ay: number,
  bx: number,
  by: number,
  radius: number,
): void {
  const x0 = Math.max(0, Math.floor(Math.min(ax, bx) - radius - 1));
  const x1 = Math.min(size - 1, Math.ceil(Math.max(ax, bx) + radius + 1));
  const y0 = Math.max(0, Math.floor(Math.min(ay, by) - radius - 1));
  const y1 = Math.min(size - 1, Math.ceil(Math.max(ay, by) + radius + 1));
  const ex = bx - ax;
  const ey = by - ay;
  const ee = ex * ex + ey * ey;
  const r2 = radius * radius;
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const px = x + 0.5;
      const py = y + 0.5;
      let t = ee > 0 ? ((px - ax) * ex + (py - ay) * ey) / ee : 0;
      t = Math.max(0, Math.min(1, t));
      const dx = px - (ax + t * ex);
      const dy = py - (ay + t * ey);
      if (dx * dx + dy * dy <= r2) grid[y * size + x] = 0;
    }
  }
}
