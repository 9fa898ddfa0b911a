/** DOM-free editing session: claim -> edit -> submit -> next. */

import { ApiClient } from "./api";
import {
  BuildOptions,
  EditorState,
  buildCorrection,
  canSubmit,
  emptyState,
  loadTask,
  markConflict,
} from "./state";

export type SessionEvent =
  | { kind: "task_loaded" }
  | { kind: "queue_empty" }
  | { kind: "submitted"; status: string }
  | { kind: "conflict" }
  | { kind: "error"; message: string };

export class EditorSession {
  state: EditorState = emptyState();

  constructor(
    private api: ApiClient,
    public editor: string,
    private onEvent: (e: SessionEvent) => void = () => {},
  ) {}

  async claimNext(): Promise<boolean> {
    const task = await this.api.nextTask(this.editor);
    if (task === null) {
      this.state = emptyState();
      this.onEvent({ kind: "queue_empty" });
      return false;
    }
    this.state = loadTask(task);
    this.onEvent({ kind: "task_loaded" });
    return true;
  }

  /**
   * Submit the current edits. On success the next task is claimed; on a
   * version conflict local edits are preserved, the claimed version is
   * refreshed from the server, and the caller sees a conflict event.
   */
  async submit(opts: Omit<BuildOptions, "editor">): Promise<SessionEvent> {
    const task = this.state.task;
    if (!task) return this.fail("no task loaded");
    if (!opts.qualityReject && !canSubmit(this.state, opts.accept ?? false)) {
      return this.fail("nothing to submit: edit the drafts or accept explicitly");
    }
    let payload;
    try {
      payload = buildCorrection(this.state, { ...opts, editor: this.editor });
    } catch (err) {
      return this.fail(err instanceof Error ? err.message : String(err));
    }
    const result = await this.api.submitCorrection(task.task_id, payload);
    if (!result.ok) {
      if (result.error.code === "version_conflict") {
        const fresh = await this.api.getTask(task.task_id);
        this.state = markConflict(this.state, fresh.version);
        const event: SessionEvent = { kind: "conflict" };
        this.onEvent(event);
        return event;
      }
      return this.fail(`${result.error.code}: ${result.error.message}`);
    }
    const event: SessionEvent = { kind: "submitted", status: result.task.status };
    this.onEvent(event);
    await this.claimNext();
    return event;
  }

  private fail(message: string): SessionEvent {
    const event: SessionEvent = { kind: "error", message };
    this.onEvent(event);
    return event;
  }
}
