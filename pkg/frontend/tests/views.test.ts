import { describe, expect, it } from "vitest";

import type { TaskView } from "../src/api.js";
import {
  renderEmptyQueueView,
  renderErrorBanner,
  renderStatsView,
  renderTaskView,
} from "../src/views.js";

const task: TaskView = {
  pair_id: "pair-1",
  instruction: 'A <model> of a "lamp" & shade',
  image_urls: ["/images/a.png", "/images/b.png", "/images/c.png", "/images/d.png"],
  status: "open",
  final_verdict: null,
  n_decisions: 1,
};

describe("renderTaskView", () => {
  it("shows all four renders and the instruction", () => {
    const html = renderTaskView(task, "", null);
    expect(html.match(/class="view-image"/g)).toHaveLength(4);
    expect(html).toContain("&lt;model&gt;");
    expect(html).toContain("&quot;lamp&quot;");
  });

  it("never renders other annotators' verdicts", () => {
    const html = renderTaskView(task, "", null);
    expect(html).not.toMatch(/final_verdict|n_decisions/);
  });

  it("shows the decision error only when present", () => {
    expect(renderTaskView(task, "", null)).toContain("hidden");
    const withError = renderTaskView(task, "", "A fail decision needs a short reason.");
    expect(withError).toContain("A fail decision needs a short reason.");
  });

  it("preserves the reason draft across re-renders", () => {
    expect(renderTaskView(task, "leg count wrong", null)).toContain("leg count wrong");
  });
});

describe("other views", () => {
  it("renders the empty-queue state", () => {
    expect(renderEmptyQueueView()).toContain("No tasks right now");
  });

  it("renders a retryable error banner", () => {
    const html = renderErrorBanner("Service error 500: boom");
    expect(html).toContain("retry-btn");
    expect(html).toContain("Service error 500: boom");
  });

  it("renders stats values and the unavailable placeholder", () => {
    const html = renderStatsView({
      resolved_tasks: 3,
      rated_pairs: 3,
      percent_agreement: 1,
      human_kappa: 1,
      machine_human_kappa: 0.74,
    });
    expect(html).toContain("1.00");
    expect(html).toContain("0.74");
    expect(renderStatsView(null)).toContain("unavailable");
  });
});
