// Wireframe of a server-provided 3D box projected onto the raw image.
// Corners arrive in binary sign order, so adjacent corners differ in
// exactly one bit.

import type { BoxJson, Intrinsics } from './api.js';

export const BOX_EDGES: ReadonlyArray<[number, number]> = [
  [0, 1], [0, 2], [0, 4], [1, 3], [1, 5], [2, 3],
  [2, 6], [3, 7], [4, 5], [4, 6], [5, 7], [6, 7],
];

export type Point2 = [number, number];

export function projectPoint(p: number[], intr: Intrinsics): Point2 | null {
  const [x, y, z] = p;
  if (z <= 1e-6) {
    return null;   // behind the camera: drop the segment
  }
  return [intr.fx * (x / z) + intr.cx, intr.fy * (y / z) + intr.cy];
}

export function wireframeSegments(
  box: BoxJson,
  intr: Intrinsics,
): Array<[Point2, Point2]> {
  const projected = box.corners.map((c) => projectPoint(c, intr));
  const segments: Array<[Point2, Point2]> = [];
  for (const [a, b] of BOX_EDGES) {
    const pa = projected[a];
    const pb = projected[b];
    if (pa && pb) {
      segments.push([pa, pb]);
    }
  }
  return segments;
}

// structural subset of CanvasRenderingContext2D so tests can record calls
export interface LineCtx {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
}

export function drawWireframe(
  ctx: LineCtx,
  box: BoxJson,
  intr: Intrinsics,
  color = '#27e06a',
): number {
  const segments = wireframeSegments(box, intr);
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (const [a, b] of segments) {
    ctx.moveTo(a[0], a[1]);
    ctx.lineTo(b[0], b[1]);
  }
  ctx.stroke();
  return segments.length;
}
