/**
 * Blinded rating session state machine.
 *
 * The view only ever holds the current item and the session's own progress;
 * no label history, tallies or other assessors' data exist anywhere in this
 * module, so no render of it can leak feedback.
 *
 * Submissions go through a strictly ordered queue: a network failure keeps
 * the submission queued and retries it, while AlreadyLabelled/OutOfOrder
 * answers force a resync to the server cursor (the label was already
 * accepted, or the client is stale), guaranteeing exactly-once labels from
 * the assessor's point of view.
 */

import {
  LabelChoice,
  NextItem,
  ServiceError,
  StudyServiceClient,
} from "./api.js";

export type Phase = "idle" | "loading" | "rating" | "submitting" | "completed" | "error";

export interface SessionView {
  phase: Phase;
  assessor: string;
  sessionId: string | null;
  snippetId: string | null;
  mediaUrl: string | null;
  position: number;
  total: number;
  subset: number;
  playbackDone: boolean;
  retrying: boolean;
  completedCount: number;
  errorMessage: string | null;
}

type Listener = (view: SessionView) => void;
type Sleep = (ms: number) => Promise<void>;

const defaultSleep: Sleep = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

export class SessionController {
  private view: SessionView;
  private queue: { snippetId: string; choice: LabelChoice }[] = [];
  private listeners: Listener[] = [];
  private flushing = false;

  constructor(
    private readonly client: StudyServiceClient,
    private readonly studyId: string,
    private readonly assessor: string,
    private readonly retryDelayMs = 1000,
    private readonly sleep: Sleep = defaultSleep,
  ) {
    this.view = {
      phase: "idle",
      assessor,
      sessionId: null,
      snippetId: null,
      mediaUrl: null,
      position: 0,
      total: 0,
      subset: 0,
      playbackDone: false,
      retrying: false,
      completedCount: 0,
      errorMessage: null,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    listener(this.getView());
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  getView(): SessionView {
    return { ...this.view };
  }

  private update(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const listener of this.listeners) {
      listener(this.getView());
    }
  }

  /** Create the session or resume at the stored cursor. */
  async start(): Promise<void> {
    this.update({ phase: "loading", errorMessage: null });
    try {
      const info = await this.client.createOrResumeSession(this.studyId, this.assessor);
      this.update({ sessionId: info.session_id, total: info.total });
      await this.refresh();
    } catch (err) {
      this.fail(err);
    }
  }

  private async refresh(): Promise<void> {
    if (!this.view.sessionId) return;
    const item: NextItem = await this.client.nextItem(this.view.sessionId);
    if (item.completed) {
      this.update({
        phase: "completed",
        snippetId: null,
        mediaUrl: null,
        completedCount: item.total,
        total: item.total,
        playbackDone: false,
      });
      return;
    }
    this.update({
      phase: "rating",
      snippetId: item.snippet_id,
      mediaUrl: this.client.mediaUrl(item.media),
      position: item.position,
      total: item.total,
      subset: item.subset,
      playbackDone: false,
      retrying: false,
    });
  }

  /** Called when the snippet has played through once; enables the buttons. */
  markPlaybackComplete(): void {
    if (this.view.phase === "rating" && !this.view.playbackDone) {
      this.update({ playbackDone: true });
    }
  }

  canSubmit(): boolean {
    return (
      this.view.phase === "rating" &&
      this.view.playbackDone &&
      this.queue.length === 0
    );
  }

  /** Queue the decision for the current item and drive the queue. */
  async submit(choice: LabelChoice): Promise<void> {
    if (!this.canSubmit() || !this.view.snippetId) {
      return;
    }
    this.queue.push({ snippetId: this.view.snippetId, choice });
    this.update({ phase: "submitting" });
    await this.flush();
  }

  private async flush(): Promise<void> {
    if (this.flushing || !this.view.sessionId) return;
    this.flushing = true;
    try {
      while (this.queue.length > 0) {
        const pending = this.queue[0]!;
        try {
          await this.client.submitLabel(this.view.sessionId, pending.snippetId, pending.choice);
          this.queue.shift();
          this.update({ retrying: false });
        } catch (err) {
          if (err instanceof ServiceError && err.retryable) {
            this.update({ retrying: true });
            await this.sleep(this.retryDelayMs);
            continue; // same submission, order preserved
          }
          if (
            err instanceof ServiceError &&
            (err.code === "AlreadyLabelled" || err.code === "OutOfOrder")
          ) {
            // The label landed (ack lost) or the client is stale: resync.
            this.queue.shift();
            this.update({ retrying: false });
            continue;
          }
          this.queue = [];
          this.fail(err);
          return;
        }
      }
      await this.refresh();
    } catch (err) {
      this.fail(err);
    } finally {
      this.flushing = false;
    }
  }

  /** Retry after a fatal error screen. */
  async retry(): Promise<void> {
    if (this.view.sessionId) {
      this.update({ phase: "loading", errorMessage: null });
      try {
        await this.refresh();
        return;
      } catch (err) {
        this.fail(err);
        return;
      }
    }
    await this.start();
  }

  private fail(err: unknown): void {
    const message =
      err instanceof ServiceError ? `${err.code}: ${err.message}` : String(err);
    this.update({ phase: "error", errorMessage: message });
  }
}
