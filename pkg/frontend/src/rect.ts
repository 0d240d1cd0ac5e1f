// Rubber-band rectangle math. Coordinates sent to the server must be
// raster pixels of the displayed PNG, so pointer positions are mapped
// through the canvas bounding box (which absorbs CSS scaling and
// device-pixel-ratio differences).

import type { RectArray } from './api.js';

export interface Rect {
  u0: number;
  v0: number;
  u1: number;
  v1: number;
}

export interface CanvasBounds {
  left: number;
  top: number;
  width: number;   // CSS pixels
  height: number;
}

/** Pointer position (client coords) -> raster pixel of the drawn image. */
export function pointerToPixel(
  clientX: number,
  clientY: number,
  bounds: CanvasBounds,
  imageWidth: number,
  imageHeight: number,
): { u: number; v: number } {
  const u = ((clientX - bounds.left) / bounds.width) * imageWidth;
  const v = ((clientY - bounds.top) / bounds.height) * imageHeight;
  return {
    u: Math.min(Math.max(u, 0), imageWidth),
    v: Math.min(Math.max(v, 0), imageHeight),
  };
}

/** Normalize a drag into a rect; null when the area is degenerate. */
export function dragToRect(
  start: { u: number; v: number },
  end: { u: number; v: number },
  minSide = 2,
): Rect | null {
  const u0 = Math.min(start.u, end.u);
  const u1 = Math.max(start.u, end.u);
  const v0 = Math.min(start.v, end.v);
  const v1 = Math.max(start.v, end.v);
  if (u1 - u0 < minSide || v1 - v0 < minSide) {
    return null;
  }
  return { u0, v0, u1, v1 };
}

export function rectToArray(r: Rect): RectArray {
  return [r.u0, r.v0, r.u1, r.v1];
}
