/**
 * Orbit-camera mesh viewer. Projection, depth sorting and shading are pure
 * functions of the state; only draw() touches the canvas.
 */

export interface ViewerMesh {
  vertices: number[][];
  faces: number[][];
}

export interface OrbitCamera {
  azimuth: number;     // degrees
  elevation: number;   // degrees, clamped to [-89, 89]
  distance: number;    // clamped to [0.5, 10]
}

export type RenderStyle = "shaded" | "wireframe";

export const DISTANCE_MIN = 0.5;
export const DISTANCE_MAX = 10;

const FOV_DEG = 30;

export class ViewerState {
  mesh: ViewerMesh | null = null;
  camera: OrbitCamera = { azimuth: 30, elevation: 20, distance: 2.5 };
  style: RenderStyle = "shaded";

  setMesh(mesh: ViewerMesh): void {
    this.mesh = mesh;
  }

  orbit(dAzimuth: number, dElevation: number): void {
    this.camera.azimuth = ((this.camera.azimuth + dAzimuth) % 360 + 360) % 360;
    this.camera.elevation = Math.max(-89, Math.min(89, this.camera.elevation + dElevation));
  }

  zoom(factor: number): void {
    this.camera.distance = Math.max(
      DISTANCE_MIN,
      Math.min(DISTANCE_MAX, this.camera.distance * factor),
    );
  }

  toggleStyle(): void {
    this.style = this.style === "shaded" ? "wireframe" : "shaded";
  }
}

export interface ProjectedFace {
  points: [number, number][];
  depth: number;
  shade: number;       // 0..1 Lambert term
}

function cameraBasis(cam: OrbitCamera) {
  const az = (cam.azimuth * Math.PI) / 180;
  const el = (cam.elevation * Math.PI) / 180;
  const eye = [
    cam.distance * Math.cos(el) * Math.sin(az),
    cam.distance * Math.sin(el),
    cam.distance * Math.cos(el) * Math.cos(az),
  ];
  const fwd = normalize(eye.map((c) => -c));
  let right = cross(fwd, [0, 1, 0]);
  const rn = Math.hypot(...right);
  right = rn < 1e-9 ? [Math.cos(az), 0, -Math.sin(az)] : right.map((c) => c / rn);
  const up = cross(right, fwd);
  return { eye, fwd, right, up };
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(a: number[]): number[] {
  const n = Math.hypot(...a) || 1;
  return a.map((c) => c / n);
}

/** Project mesh faces to screen space, painter-sorted back to front. */
export function projectFaces(mesh: ViewerMesh, cam: OrbitCamera, size: number): ProjectedFace[] {
  const { eye, fwd, right, up } = cameraBasis(cam);
  const fl = 1 / Math.tan(((FOV_DEG / 2) * Math.PI) / 180);
  const screen: [number, number][] = [];
  const depth: number[] = [];
  for (const v of mesh.vertices) {
    const rel = [v[0] - eye[0], v[1] - eye[1], v[2] - eye[2]];
    const d = Math.max(1e-6, dot(rel, fwd));
    const x = (fl * dot(rel, right)) / d;
    const y = (fl * dot(rel, up)) / d;
    screen.push([((x + 1) / 2) * size, ((1 - y) / 2) * size]);
    depth.push(d);
  }
  const light = normalize([0.4, 0.8, 0.45]);
  const faces: ProjectedFace[] = [];
  for (const f of mesh.faces) {
    const [a, b, c] = f;
    const va = mesh.vertices[a];
    const vb = mesh.vertices[b];
    const vc = mesh.vertices[c];
    const n = normalize(cross(
      [vb[0] - va[0], vb[1] - va[1], vb[2] - va[2]],
      [vc[0] - va[0], vc[1] - va[1], vc[2] - va[2]],
    ));
    faces.push({
      points: [screen[a], screen[b], screen[c]],
      depth: (depth[a] + depth[b] + depth[c]) / 3,
      shade: 0.25 + 0.75 * Math.max(0, dot(n, light)),
    });
  }
  faces.sort((p, q) => q.depth - p.depth);
  return faces;
}

export function draw(state: ViewerState, ctx: CanvasRenderingContext2D, size: number): void {
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, size, size);
  if (!state.mesh) return;
  for (const face of projectFaces(state.mesh, state.camera, size)) {
    ctx.beginPath();
    ctx.moveTo(face.points[0][0], face.points[0][1]);
    ctx.lineTo(face.points[1][0], face.points[1][1]);
    ctx.lineTo(face.points[2][0], face.points[2][1]);
    ctx.closePath();
    if (state.style === "shaded") {
      const g = Math.round(90 + 140 * face.shade);
      ctx.fillStyle = `rgb(${g * 0.55}, ${g * 0.75}, ${g})`;
      ctx.fill();
    } else {
      ctx.strokeStyle = "#7fd4ff";
      ctx.lineWidth = 0.6;
      ctx.stroke();
    }
  }
}
