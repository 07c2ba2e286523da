/**
 * Typed client for the review-service HTTP API.
 *
 * Every mutation in the UI maps 1:1 onto one of these calls; the UI
 * keeps no authoritative state of its own.
 */

export interface TaskView {
  pair_id: string;
  instruction: string;
  image_urls: string[];
  status: string;
  final_verdict: boolean | null;
  n_decisions: number;
}

export interface AgreementStats {
  resolved_tasks: number;
  rated_pairs: number;
  percent_agreement: number | null;
  human_kappa: number | null;
  machine_human_kappa: number | null;
}

export type Verdict = "pass" | "fail";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export function nextTaskUrl(annotatorId: string, base = ""): string {
  return `${base}/tasks/next?annotator=${encodeURIComponent(annotatorId)}`;
}

export function decisionUrl(pairId: string, base = ""): string {
  return `${base}/tasks/${encodeURIComponent(pairId)}/decision`;
}

async function parseFailure(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, detail);
}

export class ReviewApi {
  constructor(
    private readonly fetchFn: typeof fetch = fetch,
    private readonly base = "",
  ) {}

  async register(name: string): Promise<string> {
    const response = await this.fetchFn(`${this.base}/annotators`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ name }),
    });
    if (!response.ok) throw await parseFailure(response);
    const body = (await response.json()) as { annotator_id: string };
    return body.annotator_id;
  }

  /** Next open task for this annotator, or null when the queue is empty. */
  async nextTask(annotatorId: string): Promise<TaskView | null> {
    const response = await this.fetchFn(nextTaskUrl(annotatorId, this.base));
    if (response.status === 204) return null;
    if (!response.ok) throw await parseFailure(response);
    return (await response.json()) as TaskView;
  }

  async submitDecision(
    annotatorId: string,
    pairId: string,
    verdict: Verdict,
    reason: string | null,
  ): Promise<TaskView> {
    const response = await this.fetchFn(decisionUrl(pairId, this.base), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator: annotatorId, verdict, reason }),
    });
    if (!response.ok) throw await parseFailure(response);
    return (await response.json()) as TaskView;
  }

  async agreement(): Promise<AgreementStats> {
    const response = await this.fetchFn(`${this.base}/stats/agreement`);
    if (!response.ok) throw await parseFailure(response);
    return (await response.json()) as AgreementStats;
  }
}
