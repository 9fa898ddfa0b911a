/** Shared types mirroring the annotation service's JSON API. */

export const KEYPOINT_NAMES = [
  "upper_nose",
  "middle_nose",
  "right_eye",
  "right_beak",
  "middle_beak",
  "left_beak",
  "left_eye",
] as const;

export type KeypointName = (typeof KEYPOINT_NAMES)[number];

/** Fixed marker colors per keypoint name, stable across sessions. */
export const POINT_COLORS: Record<KeypointName, string> = {
  upper_nose: "#e6194b",
  middle_nose: "#f58231",
  right_eye: "#ffe119",
  right_beak: "#3cb44b",
  middle_beak: "#42d4f4",
  left_beak: "#4363d8",
  left_eye: "#911eb4",
};

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface Keypoints {
  points: Record<string, [number, number]>;
  visible: Record<string, boolean>;
}

export interface Task {
  task_id: string;
  frame_id: string;
  status: string;
  round: number;
  editor: string | null;
  draft_box: Box | null;
  draft_keypoints: Keypoints | null;
  revised_box: Box | null;
  revised_keypoints: Keypoints | null;
  version: number;
  image_url: string;
}

export interface CorrectionPayload {
  version: number;
  editor: string;
  revised_box: Box | null;
  revised_keypoints: Keypoints | null;
  quality: "ok" | "reject";
  accept: boolean;
  gender_confirmation?: "female" | "male";
}

export interface ApiError {
  code: string;
  message: string;
}
