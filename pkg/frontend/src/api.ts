/**
 * Typed client for the study service HTTP API.
 *
 * Every method maps one endpoint; non-2xx responses become ServiceError
 * with the service's error code, and transport failures become a
 * retryable "NetworkError".
 */

export type RatingValue = "FM+" | "FM-" | "not_assessable";

export const NOT_ASSESSABLE_REASONS = [
  "fussy/crying",
  "drowsy",
  "yawning",
  "refluxing",
  "over-excited",
  "self-soothing",
  "distracted",
] as const;

export interface LabelChoice {
  value: RatingValue;
  reason?: string;
}

export interface SessionInfo {
  session_id: string;
  study_id: string;
  assessor: string;
  cursor: number;
  total: number;
  state: "active" | "completed";
}

export interface RatingItem {
  completed: false;
  snippet_id: string;
  media: string;
  position: number;
  total: number;
  subset: number;
}

export interface CompletedMarker {
  completed: true;
  total: number;
}

export type NextItem = RatingItem | CompletedMarker;

export interface SubmitAck {
  ok: boolean;
  cursor: number;
  state: string;
}

export class ServiceError extends Error {
  constructor(
    public code: string,
    public status: number,
    detail?: string,
  ) {
    super(detail ?? code);
    this.name = "ServiceError";
  }

  get retryable(): boolean {
    return this.code === "NetworkError" || this.status >= 500;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class StudyServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  mediaUrl(path: string): string {
    return this.baseUrl + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ServiceError("NetworkError", 0, String(err));
    }
    if (!response.ok) {
      let code = `Http${response.status}`;
      let detail: string | undefined;
      try {
        const body = (await response.json()) as { error?: string; detail?: string };
        if (body.error) code = body.error;
        detail = body.detail;
      } catch {
        // non-JSON error body; keep the status code
      }
      throw new ServiceError(code, response.status, detail);
    }
    return (await response.json()) as T;
  }

  createOrResumeSession(studyId: string, assessor: string): Promise<SessionInfo> {
    return this.request<SessionInfo>(`/studies/${encodeURIComponent(studyId)}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ assessor }),
    });
  }

  nextItem(sessionId: string): Promise<NextItem> {
    return this.request<NextItem>(`/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  submitLabel(sessionId: string, snippetId: string, choice: LabelChoice): Promise<SubmitAck> {
    return this.request<SubmitAck>(`/sessions/${encodeURIComponent(sessionId)}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        snippet_id: snippetId,
        label: choice.value,
        reason: choice.reason ?? null,
      }),
    });
  }
}
