/**
 * DOM layer: renders the session view and wires playback, buttons and the
 * 1/2/3 keyboard shortcuts.
 *
 * Every dynamic value in the document comes from the current SessionView
 * (current item, own progress, submission state); the markup has no slot
 * that could display past labels, other assessors or statistics.
 */

import { LabelChoice, NOT_ASSESSABLE_REASONS, RatingValue } from "./api.js";
import { SessionController, SessionView } from "./session.js";

const CHOICES: { key: string; value: RatingValue; caption: string }[] = [
  { key: "1", value: "FM+", caption: "[1] Fidgety movements present" },
  { key: "2", value: "FM-", caption: "[2] Fidgety movements absent" },
  { key: "3", value: "not_assessable", caption: "[3] Not assessable" },
];

export interface App {
  root: HTMLElement;
  dispose: () => void;
}

export function createApp(
  root: HTMLElement,
  controller: SessionController,
  doc: Document = document,
): App {
  root.innerHTML = `
    <header>
      <span data-field="assessor"></span>
      <span data-field="progress"></span>
    </header>
    <main>
      <section data-screen="loading" hidden><p>Loading session…</p></section>
      <section data-screen="rating" hidden>
        <video data-field="player" controls preload="auto"></video>
        <button type="button" data-action="replay">Replay snippet</button>
        <p data-field="gate-hint">Watch the full snippet once to enable rating.</p>
        <div data-field="choices"></div>
        <label data-field="reason-row" hidden>
          Reason: <select data-field="reason"></select>
        </label>
        <p data-field="status" role="status"></p>
      </section>
      <section data-screen="completed" hidden>
        <p data-field="completion"></p>
      </section>
      <section data-screen="error" hidden>
        <p data-field="error"></p>
        <button type="button" data-action="retry">Retry</button>
      </section>
    </main>
  `;

  const field = <T extends HTMLElement>(name: string): T => {
    const el = root.querySelector<T>(`[data-field="${name}"]`);
    if (!el) throw new Error(`missing field ${name}`);
    return el;
  };
  const screen = (name: string): HTMLElement => {
    const el = root.querySelector<HTMLElement>(`[data-screen="${name}"]`);
    if (!el) throw new Error(`missing screen ${name}`);
    return el;
  };

  const player = field<HTMLVideoElement>("player");
  const choicesBox = field<HTMLDivElement>("choices");
  const reasonRow = field<HTMLLabelElement>("reason-row");
  const reasonSelect = field<HTMLSelectElement>("reason");

  for (const reason of NOT_ASSESSABLE_REASONS) {
    const option = doc.createElement("option");
    option.value = reason;
    option.textContent = reason;
    reasonSelect.appendChild(option);
  }

  const buttons = new Map<RatingValue, HTMLButtonElement>();
  for (const choice of CHOICES) {
    const button = doc.createElement("button");
    button.type = "button";
    button.dataset.choice = choice.value;
    button.textContent = choice.caption;
    button.disabled = true;
    button.addEventListener("click", () => submit(choice.value));
    choicesBox.appendChild(button);
    buttons.set(choice.value, button);
  }

  function submit(value: RatingValue): void {
    if (!controller.canSubmit()) return;
    const choice: LabelChoice =
      value === "not_assessable"
        ? { value, reason: reasonSelect.value || NOT_ASSESSABLE_REASONS[0] }
        : { value };
    void controller.submit(choice);
  }

  function onKeyDown(event: KeyboardEvent): void {
    const match = CHOICES.find((c) => c.key === event.key);
    if (match) {
      submit(match.value);
    }
  }

  function onEnded(): void {
    controller.markPlaybackComplete();
  }

  function onReplay(): void {
    player.currentTime = 0;
    void player.play()?.catch(() => undefined);
  }

  doc.addEventListener("keydown", onKeyDown);
  player.addEventListener("ended", onEnded);
  root
    .querySelector<HTMLButtonElement>('[data-action="replay"]')!
    .addEventListener("click", onReplay);
  root
    .querySelector<HTMLButtonElement>('[data-action="retry"]')!
    .addEventListener("click", () => void controller.retry());

  let lastMedia: string | null = null;

  function render(view: SessionView): void {
    field("assessor").textContent = `Assessor ${view.assessor}`;
    const showProgress = view.phase === "rating" || view.phase === "submitting";
    field("progress").textContent = showProgress
      ? `Item ${view.position} of ${view.total} (subset ${view.subset})`
      : "";

    for (const name of ["loading", "rating", "completed", "error"]) {
      screen(name).hidden = true;
    }
    switch (view.phase) {
      case "idle":
      case "loading":
        screen("loading").hidden = false;
        break;
      case "rating":
      case "submitting": {
        screen("rating").hidden = false;
        if (view.mediaUrl && view.mediaUrl !== lastMedia) {
          player.src = view.mediaUrl;
          lastMedia = view.mediaUrl;
        }
        const enabled = view.phase === "rating" && view.playbackDone;
        for (const button of buttons.values()) {
          button.disabled = !enabled;
        }
        reasonRow.hidden = !enabled;
        field("gate-hint").hidden = view.playbackDone;
        field("status").textContent = view.retrying
          ? "Connection lost; retrying submission…"
          : view.phase === "submitting"
            ? "Submitting…"
            : "";
        break;
      }
      case "completed":
        screen("completed").hidden = false;
        field("completion").textContent =
          `${view.completedCount}/${view.total} completed`;
        break;
      case "error":
        screen("error").hidden = false;
        field("error").textContent = view.errorMessage ?? "Unknown error";
        break;
    }
  }

  const unsubscribe = controller.subscribe(render);

  return {
    root,
    dispose: () => {
      unsubscribe();
      doc.removeEventListener("keydown", onKeyDown);
      player.removeEventListener("ended", onEnded);
    },
  };
}
