/** Browser wiring: pointer/keyboard events around the editor session. */

import { ApiClient } from "./api";
import { Hit, MARKER_RADIUS, View, draw, hitTest, toImageCoords } from "./canvas";
import { EditorSession, SessionEvent } from "./controller";
import {
  movePoint,
  placeNext,
  selectNextPoint,
  setBox,
  toggleVisibility,
} from "./state";
import { KEYPOINT_NAMES } from "./types";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "";
const editorName = params.get("editor") ?? "anonymous";

const api = new ApiClient(baseUrl);
const canvas = document.getElementById("editor") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const taskEl = document.getElementById("task-info")!;

const view: View = { zoom: 1, panX: 0, panY: 0 };
let image: HTMLImageElement | null = null;
let dragging: Hit = null;
let panning: { startX: number; startY: number } | null = null;

const session = new EditorSession(api, editorName, onEvent);

function onEvent(e: SessionEvent) {
  switch (e.kind) {
    case "task_loaded": {
      const task = session.state.task!;
      taskEl.textContent = `${task.task_id} (round ${task.round}, v${task.version})`;
      statusEl.textContent = session.state.pending.length
        ? `placement mode: click to drop ${session.state.pending[0]}`
        : "drafts loaded; drag to correct";
      statusEl.className = "";
      image = new Image();
      image.onload = () => {
        fitView();
        redraw();
      };
      image.src = api.imageUrl(task);
      break;
    }
    case "queue_empty":
      taskEl.textContent = "";
      statusEl.textContent = "queue empty: no predicted tasks";
      image = null;
      redraw();
      break;
    case "submitted":
      statusEl.textContent = `saved (${e.status})`;
      break;
    case "conflict":
      statusEl.textContent =
        "version conflict: someone else edited this task; your edits are intact, submit again";
      statusEl.className = "warn";
      break;
    case "error":
      statusEl.textContent = e.message;
      statusEl.className = "warn";
      break;
  }
}

function fitView() {
  if (!image) return;
  const zoom = Math.min(canvas.width / image.width, canvas.height / image.height);
  view.zoom = zoom;
  view.panX = (canvas.width - image.width * zoom) / 2;
  view.panY = (canvas.height - image.height * zoom) / 2;
}

function redraw() {
  draw(ctx, image, session.state, view);
}

canvas.addEventListener("pointerdown", (ev) => {
  const [ix, iy] = toImageCoords(view, ev.offsetX, ev.offsetY);
  if (session.state.pending.length > 0) {
    session.state = placeNext(session.state, ix, iy);
    onEvent({ kind: "task_loaded" });
    redraw();
    return;
  }
  dragging = hitTest(session.state, ix, iy, view.zoom);
  if (!dragging) panning = { startX: ev.offsetX - view.panX, startY: ev.offsetY - view.panY };
});

canvas.addEventListener("pointermove", (ev) => {
  const [ix, iy] = toImageCoords(view, ev.offsetX, ev.offsetY);
  if (panning) {
    view.panX = ev.offsetX - panning.startX;
    view.panY = ev.offsetY - panning.startY;
    redraw();
    return;
  }
  if (!dragging) return;
  const s = session.state;
  if (dragging.kind === "point") {
    session.state = movePoint(s, dragging.name, ix, iy);
  } else if (dragging.kind === "box" && s.box) {
    session.state = setBox(s, { ...s.box, x: ix - s.box.w / 2, y: iy - s.box.h / 2 });
  } else if (dragging.kind === "box-corner" && s.box) {
    const b = { ...s.box };
    const right = b.x + b.w;
    const bottom = b.y + b.h;
    if (dragging.corner.includes("w")) {
      b.w = right - ix;
      b.x = ix;
    } else {
      b.w = ix - b.x;
    }
    if (dragging.corner.includes("n")) {
      b.h = bottom - iy;
      b.y = iy;
    } else {
      b.h = iy - b.y;
    }
    if (b.w > 1 && b.h > 1) session.state = setBox(s, b);
  }
  redraw();
});

canvas.addEventListener("pointerup", () => {
  dragging = null;
  panning = null;
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
  const [ix, iy] = toImageCoords(view, ev.offsetX, ev.offsetY);
  view.zoom *= factor;
  view.panX = ev.offsetX - ix * view.zoom;
  view.panY = ev.offsetY - iy * view.zoom;
  redraw();
});

// keyboard: a accept, r reject-quality, n next point, v visibility toggle
window.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement) return;
  switch (ev.key) {
    case "a":
      void session.submit({ accept: true });
      break;
    case "r":
      void session.submit({ qualityReject: true });
      break;
    case "n":
      session.state = selectNextPoint(session.state);
      redraw();
      break;
    case "v":
      session.state = toggleVisibility(session.state, session.state.selected);
      redraw();
      break;
    case "Enter":
      void session.submit({});
      break;
  }
});

document.getElementById("submit")!.addEventListener("click", () => void session.submit({}));
document.getElementById("accept")!.addEventListener("click", () => void session.submit({ accept: true }));
document.getElementById("reject")!.addEventListener("click", () => void session.submit({ qualityReject: true }));
document.getElementById("skip")!.addEventListener("click", () => void session.claimNext());
document.getElementById("gender-f")!.addEventListener("click", () => void session.submit({ accept: true, gender: "female" }));
document.getElementById("gender-m")!.addEventListener("click", () => void session.submit({ accept: true, gender: "male" }));

const legend = document.getElementById("legend")!;
for (const name of KEYPOINT_NAMES) {
  const li = document.createElement("li");
  li.textContent = name;
  li.style.setProperty("--c", `var(--${name}, #999)`);
  legend.appendChild(li);
}
void MARKER_RADIUS; // referenced by canvas module; kept for tree-shaking clarity

void session.claimNext();
