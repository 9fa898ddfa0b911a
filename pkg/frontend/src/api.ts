/** Typed client for the annotation service; all server I/O lives here. */

import { ApiError, CorrectionPayload, Task } from "./types";

export type SubmitResult =
  | { ok: true; task: Task }
  | { ok: false; error: ApiError; status: number };

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  /** Claim the next predicted task; null when the queue is empty. */
  async nextTask(editor: string): Promise<Task | null> {
    const res = await this.fetchFn(this.url(`/api/tasks/next?editor=${encodeURIComponent(editor)}`));
    if (res.status === 404) return null;
    if (!res.ok) throw new Error(`nextTask failed: ${res.status}`);
    return (await res.json()) as Task;
  }

  async getTask(taskId: string): Promise<Task> {
    const res = await this.fetchFn(this.url(`/api/tasks/${taskId}`));
    if (!res.ok) throw new Error(`getTask failed: ${res.status}`);
    return (await res.json()) as Task;
  }

  /** POST a correction; version conflicts come back as a typed result. */
  async submitCorrection(taskId: string, payload: CorrectionPayload): Promise<SubmitResult> {
    const res = await this.fetchFn(this.url(`/api/tasks/${taskId}/correction`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (res.ok) {
      return { ok: true, task: (await res.json()) as Task };
    }
    const error = (await res.json()) as ApiError;
    return { ok: false, error, status: res.status };
  }

  async rounds(): Promise<{ rounds: unknown[]; current: number }> {
    const res = await this.fetchFn(this.url("/api/rounds"));
    if (!res.ok) throw new Error(`rounds failed: ${res.status}`);
    return (await res.json()) as { rounds: unknown[]; current: number };
  }

  async advanceRound(): Promise<{ round: number; advanced: boolean }> {
    const res = await this.fetchFn(this.url("/api/rounds/advance"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ keypoints: {} }),
    });
    if (!res.ok) {
      const error = (await res.json()) as ApiError;
      throw new Error(`${error.code}: ${error.message}`);
    }
    return (await res.json()) as { round: number; advanced: boolean };
  }

  imageUrl(task: Task): string {
    return this.url(task.image_url);
  }
}
