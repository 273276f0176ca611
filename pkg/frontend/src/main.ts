/**
 * Entry point: reads study, assessor and service base URL from the query
 * string and mounts the rating app.
 *
 *   index.html?study=<study_id>&assessor=<code>&base=http://127.0.0.1:8000
 */

import { StudyServiceClient } from "./api.js";
import { SessionController } from "./session.js";
import { createApp } from "./ui.js";

function param(name: string, fallback = ""): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

export function bootstrap(root: HTMLElement): void {
  const base = param("base", "");
  const studyId = param("study");
  const assessor = param("assessor");
  if (!studyId || !assessor) {
    root.textContent = "Missing ?study= and ?assessor= query parameters.";
    return;
  }
  const client = new StudyServiceClient(base);
  const controller = new SessionController(client, studyId, assessor);
  createApp(root, controller);
  void controller.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  bootstrap(document.getElementById("app")!);
}
