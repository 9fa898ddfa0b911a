/** Shared test fixtures. */

import { KEYPOINT_NAMES, Task } from "../src/types";

export function makeTask(overrides: Partial<Task> = {}): Task {
  const points: Record<string, [number, number]> = {};
  const visible: Record<string, boolean> = {};
  KEYPOINT_NAMES.forEach((n, i) => {
    points[n] = [10 + i * 5, 20 + i * 3];
    visible[n] = true;
  });
  return {
    task_id: "t-f1",
    frame_id: "f1",
    status: "predicted",
    round: 1,
    editor: null,
    draft_box: { x: 5, y: 6, w: 80, h: 70 },
    draft_keypoints: { points, visible },
    revised_box: null,
    revised_keypoints: null,
    version: 1,
    image_url: "/images/f1",
    ...overrides,
  };
}
