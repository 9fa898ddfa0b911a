/** Canvas rendering and hit-testing for the box + seven markers. */

import { EditorState } from "./state";
import { KEYPOINT_NAMES, KeypointName, POINT_COLORS } from "./types";

export interface View {
  zoom: number;
  panX: number;
  panY: number;
}

export const MARKER_RADIUS = 6;
export const HANDLE_SIZE = 8;

export function toImageCoords(view: View, cx: number, cy: number): [number, number] {
  return [(cx - view.panX) / view.zoom, (cy - view.panY) / view.zoom];
}

export function toCanvasCoords(view: View, ix: number, iy: number): [number, number] {
  return [ix * view.zoom + view.panX, iy * view.zoom + view.panY];
}

export type Hit =
  | { kind: "point"; name: KeypointName }
  | { kind: "box-corner"; corner: "nw" | "ne" | "se" | "sw" }
  | { kind: "box" }
  | null;

/** Topmost object under an image-space position (markers beat the box). */
export function hitTest(state: EditorState, ix: number, iy: number, zoom: number): Hit {
  const tol = MARKER_RADIUS / zoom + 2;
  if (state.points) {
    for (const name of [...KEYPOINT_NAMES].reverse()) {
      const p = state.points.get(name);
      if (p && Math.hypot(p.x - ix, p.y - iy) <= tol) return { kind: "point", name };
    }
  }
  if (state.box) {
    const { x, y, w, h } = state.box;
    const corners = {
      nw: [x, y],
      ne: [x + w, y],
      se: [x + w, y + h],
      sw: [x, y + h],
    } as const;
    for (const [corner, [cx, cy]] of Object.entries(corners)) {
      if (Math.abs(cx - ix) <= tol && Math.abs(cy - iy) <= tol) {
        return { kind: "box-corner", corner: corner as "nw" | "ne" | "se" | "sw" };
      }
    }
    if (ix >= x && ix <= x + w && iy >= y && iy <= y + h) return { kind: "box" };
  }
  return null;
}

export function draw(
  ctx: CanvasRenderingContext2D,
  image: HTMLImageElement | null,
  state: EditorState,
  view: View,
): void {
  ctx.save();
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.translate(view.panX, view.panY);
  ctx.scale(view.zoom, view.zoom);
  if (image) ctx.drawImage(image, 0, 0);

  if (state.box) {
    const { x, y, w, h } = state.box;
    ctx.strokeStyle = "#00d084";
    ctx.lineWidth = 2 / view.zoom;
    ctx.strokeRect(x, y, w, h);
    ctx.fillStyle = "#00d084";
    const s = HANDLE_SIZE / view.zoom;
    for (const [cx, cy] of [[x, y], [x + w, y], [x + w, y + h], [x, y + h]]) {
      ctx.fillRect(cx - s / 2, cy - s / 2, s, s);
    }
  }

  if (state.points) {
    for (const name of KEYPOINT_NAMES) {
      const p = state.points.get(name);
      if (!p) continue;
      ctx.beginPath();
      ctx.arc(p.x, p.y, MARKER_RADIUS / view.zoom, 0, Math.PI * 2);
      ctx.lineWidth = 2 / view.zoom;
      ctx.strokeStyle = POINT_COLORS[name];
      if (p.visible) {
        ctx.fillStyle = POINT_COLORS[name];
        ctx.fill();
      }
      ctx.stroke();
      if (name === state.selected) {
        ctx.beginPath();
        ctx.arc(p.x, p.y, (MARKER_RADIUS + 3) / view.zoom, 0, Math.PI * 2);
        ctx.strokeStyle = "#ffffff";
        ctx.stroke();
      }
    }
  }
  ctx.restore();
}
