/**
 * Review flow: next task -> show instruction beside the four renders ->
 * pass/fail (fail needs a reason, enforced before any request) -> submit
 * -> auto-advance.  The server owns all state; refreshing mid-task just
 * reassigns via next_task.
 */

import { ApiError, ReviewApi, type TaskView, type Verdict } from "./api.js";
import { normalizeReason, validateDecision } from "./validation.js";
import {
  renderEmptyQueueView,
  renderErrorBanner,
  renderRegisterView,
  renderStatsView,
  renderTaskView,
} from "./views.js";

const POLL_MS = 4000;
const STATS_MS = 10_000;

type State =
  | { kind: "register"; error: string | null }
  | { kind: "reviewing"; annotatorId: string; task: TaskView; reason: string; error: string | null }
  | { kind: "empty"; annotatorId: string }
  | { kind: "failed"; annotatorId: string | null; message: string };

export class ReviewApp {
  private state: State = { kind: "register", error: null };
  private pollTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: ReviewApi,
    private readonly mount: HTMLElement,
    private readonly statsMount: HTMLElement,
  ) {}

  start(): void {
    this.render();
    this.refreshStats();
    setInterval(() => this.refreshStats(), STATS_MS);
    document.addEventListener("keydown", (event) => this.onKey(event));
  }

  private setState(state: State): void {
    this.state = state;
    this.render();
  }

  private async advance(annotatorId: string): Promise<void> {
    if (this.pollTimer) clearTimeout(this.pollTimer);
    try {
      const task = await this.api.nextTask(annotatorId);
      if (task === null) {
        this.setState({ kind: "empty", annotatorId });
        this.pollTimer = setTimeout(() => void this.advance(annotatorId), POLL_MS);
      } else {
        this.setState({ kind: "reviewing", annotatorId, task, reason: "", error: null });
      }
    } catch (error) {
      this.setState({ kind: "failed", annotatorId, message: describe(error) });
    }
  }

  private async submit(verdict: Verdict): Promise<void> {
    if (this.state.kind !== "reviewing") return;
    const { annotatorId, task } = this.state;
    const reason = this.currentReason();
    const check = validateDecision(verdict, reason);
    if (!check.ok) {
      this.setState({ ...this.state, reason, error: check.error ?? "invalid decision" });
      return;
    }
    try {
      await this.api.submitDecision(annotatorId, task.pair_id, verdict, normalizeReason(verdict, reason));
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // Someone (or an earlier click) already decided: advance, never resubmit.
        await this.advance(annotatorId);
        return;
      }
      this.setState({ kind: "failed", annotatorId, message: describe(error) });
      return;
    }
    this.refreshStats();
    await this.advance(annotatorId);
  }

  private currentReason(): string {
    const field = this.mount.querySelector<HTMLTextAreaElement>("#reason");
    return field ? field.value : "";
  }

  private onKey(event: KeyboardEvent): void {
    if (this.state.kind !== "reviewing") return;
    if (event.target instanceof HTMLTextAreaElement || event.target instanceof HTMLInputElement) return;
    if (event.key === "p") void this.submit("pass");
    if (event.key === "f") void this.submit("fail");
  }

  private async refreshStats(): Promise<void> {
    try {
      this.statsMount.innerHTML = renderStatsView(await this.api.agreement());
    } catch {
      this.statsMount.innerHTML = renderStatsView(null);
    }
  }

  private render(): void {
    const state = this.state;
    switch (state.kind) {
      case "register": {
        this.mount.innerHTML = renderRegisterView();
        const form = this.mount.querySelector<HTMLFormElement>("#register-form");
        form?.addEventListener("submit", (event) => {
          event.preventDefault();
          const name = this.mount.querySelector<HTMLInputElement>("#annotator-name")?.value ?? "";
          void this.register(name);
        });
        if (state.error) {
          const banner = this.mount.querySelector<HTMLElement>("#register-error");
          if (banner) {
            banner.hidden = false;
            banner.textContent = state.error;
          }
        }
        break;
      }
      case "reviewing": {
        this.mount.innerHTML = renderTaskView(state.task, state.reason, state.error);
        this.mount.querySelector("#pass-btn")?.addEventListener("click", () => void this.submit("pass"));
        this.mount.querySelector("#fail-btn")?.addEventListener("click", () => void this.submit("fail"));
        break;
      }
      case "empty":
        this.mount.innerHTML = renderEmptyQueueView();
        break;
      case "failed": {
        this.mount.innerHTML = renderErrorBanner(state.message);
        this.mount.querySelector("#retry-btn")?.addEventListener("click", () => {
          if (state.annotatorId) void this.advance(state.annotatorId);
          else this.setState({ kind: "register", error: null });
        });
        break;
      }
    }
  }

  private async register(name: string): Promise<void> {
    if (name.trim() === "") {
      this.setState({ kind: "register", error: "Name must not be empty." });
      return;
    }
    try {
      const annotatorId = await this.api.register(name.trim());
      await this.advance(annotatorId);
    } catch (error) {
      this.setState({ kind: "register", error: describe(error) });
    }
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `Service error ${error.status}: ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}

function bootstrap(): void {
  const mount = document.getElementById("app");
  const statsMount = document.getElementById("stats-mount");
  if (!mount || !statsMount) return;
  new ReviewApp(new ReviewApi(), mount, statsMount).start();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  bootstrap();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", bootstrap);
}
