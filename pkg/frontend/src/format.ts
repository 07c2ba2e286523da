/** Display formatting for agreement statistics. */

import type { AgreementStats } from "./api.js";

/** Kappa to two decimals; a dash when there is not enough data. */
export function formatKappa(value: number | null): string {
  return value === null ? "-" : value.toFixed(2);
}

export function formatPercent(value: number | null): string {
  return value === null ? "-" : `${(value * 100).toFixed(1)}%`;
}

export interface StatsRow {
  label: string;
  value: string;
}

export function statsRows(stats: AgreementStats): StatsRow[] {
  return [
    { label: "Resolved tasks", value: String(stats.resolved_tasks) },
    { label: "Percent agreement", value: formatPercent(stats.percent_agreement) },
    { label: "Annotator kappa", value: formatKappa(stats.human_kappa) },
    { label: "Machine vs human kappa", value: formatKappa(stats.machine_human_kappa) },
  ];
}
