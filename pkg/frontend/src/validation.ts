/** Client-side decision checks, mirrored from the service contract. */

import type { Verdict } from "./api.js";

export interface DecisionCheck {
  ok: boolean;
  error?: string;
}

/** A fail verdict needs a non-blank reason; a pass never does. */
export function validateDecision(verdict: Verdict, reason: string): DecisionCheck {
  if (verdict === "fail" && reason.trim() === "") {
    return { ok: false, error: "A fail decision needs a short reason." };
  }
  return { ok: true };
}

export function normalizeReason(verdict: Verdict, reason: string): string | null {
  const trimmed = reason.trim();
  if (verdict === "pass") return trimmed === "" ? null : trimmed;
  return trimmed;
}
