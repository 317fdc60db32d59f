// Flattening service history into display rows. One row per event; rows
// keep their event-set grouping via setIndex so branch views can mark the
// shared prefix.

import type { WireEvent, WireEventSet } from "./types.js";

export const NO_VALUE_MARKER = "state-altering, no value";

export interface TimelineRow {
  setIndex: number;
  eventIndex: number;
  timestamp: number;
  kind: "inquiry" | "intervention";
  actionLabel: string;
  /** numeric: "7.5 10^9/L"; label: chips; intervention: the no-value marker */
  outcomeText: string;
  /** label outcomes render as chips instead of one string */
  chips: string[];
  numericValue: number | null;
  code: string;
}

export function actionLabel(event: WireEvent): string {
  const name = event.action.display_name;
  return name && name.length > 0 ? name : event.action.code;
}

export function outcomeText(event: WireEvent): string {
  const outcome = event.outcome;
  if (outcome === null) return NO_VALUE_MARKER;
  if (outcome.variant === "numeric") {
    return `${outcome.value} ${outcome.unit}`.trimEnd();
  }
  return outcome.values.join(", ");
}

export function toRows(history: WireEventSet[]): TimelineRow[] {
  const rows: TimelineRow[] = [];
  history.forEach((set, setIndex) => {
    set.events.forEach((event, eventIndex) => {
      rows.push({
        setIndex,
        eventIndex,
        timestamp: set.timestamp,
        kind: event.action.kind,
        actionLabel: actionLabel(event),
        outcomeText: outcomeText(event),
        chips: event.outcome?.variant === "label" ? [...event.outcome.values] : [],
        numericValue:
          event.outcome?.variant === "numeric" ? event.outcome.value : null,
        code: event.action.code,
      });
    });
  });
  // history arrives ordered, but guard the invariant anyway: rows must never
  // render out of time order
  for (let i = 1; i < rows.length; i++) {
    if (rows[i]!.timestamp < rows[i - 1]!.timestamp) {
      throw new Error(
        `timeline out of order at row ${i}: ` +
          `t=${rows[i]!.timestamp} after t=${rows[i - 1]!.timestamp}`,
      );
    }
  }
  return rows;
}

/** Client-side validation for the step form: at least one order, advance > 0. */
export function validateStepForm(
  orderCount: number,
  advanceMinutes: number,
): string | null {
  if (orderCount < 1) return "add at least one order";
  if (!Number.isFinite(advanceMinutes) || advanceMinutes <= 0) {
    return "time advance must be positive";
  }
  return null;
}
