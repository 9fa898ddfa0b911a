/** Editor state and pure transitions; all mutation goes through these. */

import { Box, CorrectionPayload, KEYPOINT_NAMES, Keypoints, KeypointName, Task } from "./types";

export interface EditablePoint {
  x: number;
  y: number;
  visible: boolean;
}

export interface EditorState {
  task: Task | null;
  box: Box | null;
  /** Present once all seven markers exist; placement mode fills them in order. */
  points: Map<KeypointName, EditablePoint> | null;
  /** Names still waiting for placement (canonical order). */
  pending: KeypointName[];
  selected: KeypointName;
  dirty: boolean;
  conflict: boolean;
}

export function emptyState(): EditorState {
  return {
    task: null,
    box: null,
    points: null,
    pending: [],
    selected: KEYPOINT_NAMES[0],
    dirty: false,
    conflict: false,
  };
}

/** Initialize the editor from a claimed task (revised beats draft). */
export function loadTask(task: Task): EditorState {
  const box = task.revised_box ?? task.draft_box;
  const kps = task.revised_keypoints ?? task.draft_keypoints;
  let points: Map<KeypointName, EditablePoint> | null = null;
  let pending: KeypointName[] = [];
  if (kps) {
    points = new Map();
    for (const name of KEYPOINT_NAMES) {
      const [x, y] = kps.points[name];
      points.set(name, { x, y, visible: kps.visible[name] ?? true });
    }
  } else {
    pending = [...KEYPOINT_NAMES]; // placement mode, canonical order
  }
  return {
    task,
    box: box ? { ...box } : null,
    points,
    pending,
    selected: KEYPOINT_NAMES[0],
    dirty: false,
    conflict: false,
  };
}

export function movePoint(state: EditorState, name: KeypointName, x: number, y: number): EditorState {
  if (!state.points) return state;
  const points = new Map(state.points);
  const prev = points.get(name)!;
  points.set(name, { ...prev, x, y });
  return { ...state, points, dirty: true };
}

/** Placement mode: drop the next pending marker at (x, y). */
export function placeNext(state: EditorState, x: number, y: number): EditorState {
  if (state.pending.length === 0) return state;
  const [name, ...rest] = state.pending;
  const points = new Map(state.points ?? []);
  points.set(name, { x, y, visible: true });
  return {
    ...state,
    points: rest.length === 0 ? points : points,
    pending: rest,
    selected: name,
    dirty: true,
  };
}

export function toggleVisibility(state: EditorState, name: KeypointName): EditorState {
  if (!state.points) return state;
  const points = new Map(state.points);
  const prev = points.get(name);
  if (!prev) return state;
  points.set(name, { ...prev, visible: !prev.visible });
  return { ...state, points, dirty: true };
}

export function selectNextPoint(state: EditorState): EditorState {
  const idx = KEYPOINT_NAMES.indexOf(state.selected);
  return { ...state, selected: KEYPOINT_NAMES[(idx + 1) % KEYPOINT_NAMES.length] };
}

export function setBox(state: EditorState, box: Box): EditorState {
  return { ...state, box: { ...box }, dirty: true };
}

export function markConflict(state: EditorState, serverVersion: number): EditorState {
  if (!state.task) return state;
  // keep every local edit; only the claimed version advances
  return { ...state, conflict: true, task: { ...state.task, version: serverVersion } };
}

/** Submit is allowed only with edits or an explicit accept. */
export function canSubmit(state: EditorState, accept: boolean): boolean {
  if (!state.task) return false;
  if (state.pending.length > 0) return false; // markers not all placed yet
  return state.dirty || accept;
}

export function pointsComplete(state: EditorState): boolean {
  if (!state.points) return false;
  return KEYPOINT_NAMES.every((n) => state.points!.has(n));
}

function toKeypoints(points: Map<KeypointName, EditablePoint>): Keypoints {
  const out: Keypoints = { points: {}, visible: {} };
  for (const name of KEYPOINT_NAMES) {
    const p = points.get(name);
    if (!p) throw new Error(`keypoint schema violation: missing ${name}`);
    out.points[name] = [p.x, p.y];
    out.visible[name] = p.visible;
  }
  const extra = [...points.keys()].filter((n) => !KEYPOINT_NAMES.includes(n));
  if (extra.length > 0) throw new Error(`keypoint schema violation: unknown ${extra.join(", ")}`);
  return out;
}

export interface BuildOptions {
  editor: string;
  accept?: boolean;
  qualityReject?: boolean;
  gender?: "female" | "male";
}

/**
 * Build the correction body; never emits a point set violating the 7-name
 * schema. A quality reject sends no geometry at all.
 */
export function buildCorrection(state: EditorState, opts: BuildOptions): CorrectionPayload {
  if (!state.task) throw new Error("no task loaded");
  if (opts.qualityReject) {
    return {
      version: state.task.version,
      editor: opts.editor,
      revised_box: null,
      revised_keypoints: null,
      quality: "reject",
      accept: false,
      ...(opts.gender ? { gender_confirmation: opts.gender } : {}),
    };
  }
  if (!state.box || !state.points) throw new Error("box and all 7 keypoints required");
  return {
    version: state.task.version,
    editor: opts.editor,
    revised_box: { ...state.box },
    revised_keypoints: toKeypoints(state.points),
    quality: "ok",
    accept: opts.accept ?? false,
    ...(opts.gender ? { gender_confirmation: opts.gender } : {}),
  };
}
