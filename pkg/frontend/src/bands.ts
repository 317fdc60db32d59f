// Error-band coloring for timeline rows once a ground-truth reference is
// loaded. Thresholds: relative error <= 10% is precise (green), <= 20% is
// acceptable (amber), beyond that is a deviation (red). Bands are computed
// from the values already on screen; the service is never re-asked.

import type { ReferenceEpisode, WireEventSet } from "./types.js";

export type Band = "green" | "amber" | "red" | "none";

export const BAND_LABELS: Record<Band, string> = {
  green: "precise",
  amber: "acceptable",
  red: "deviation",
  none: "",
};

/**
 * |truth - predicted| / |truth|. A zero truth matched by a zero prediction
 * is a perfect hit; a zero truth with any other prediction has no defined
 * relative error and returns null.
 */
export function relativeError(truth: number, predicted: number): number | null {
  if (truth === 0) {
    return predicted === 0 ? 0 : null;
  }
  return Math.abs(truth - predicted) / Math.abs(truth);
}

/** Band boundaries are inclusive on the better side: 0.10 is still green. */
export function bandFor(error: number | null): Band {
  if (error === null) return "none";
  if (error <= 0.1) return "green";
  if (error <= 0.2) return "amber";
  return "red";
}

export interface RowMismatch {
  setIndex: number;
  eventIndex: number;
  expected: string;
  found: string;
}

export class MisalignedReferenceError extends Error {
  constructor(readonly mismatches: RowMismatch[]) {
    const head = mismatches
      .slice(0, 5)
      .map(
        (m) =>
          `set ${m.setIndex} event ${m.eventIndex}: ` +
          `expected ${m.expected}, found ${m.found}`,
      )
      .join("; ");
    super(
      `reference does not align with the session timeline ` +
        `(${mismatches.length} mismatched row${mismatches.length === 1 ? "" : "s"}: ${head})`,
    );
    this.name = "MisalignedReferenceError";
  }
}

function actionKey(set: WireEventSet, eventIndex: number): string {
  const event = set.events[eventIndex];
  if (!event) return "(missing)";
  return `${event.action.kind}:${event.action.code}`;
}

/**
 * Per-event bands for a session history against a reference episode.
 *
 * The reference must align with the displayed timeline: same number of event
 * sets, same timestamps, and the same action kind/code at every position.
 * Anything else raises MisalignedReferenceError carrying a row diff.
 *
 * Returns one Band per event, in timeline order, per event set. Only numeric
 * inquiry rows are colored; label and intervention rows get "none".
 */
export function colorTimeline(
  history: WireEventSet[],
  reference: ReferenceEpisode,
): Band[][] {
  const truth = reference.timeline;
  const mismatches: RowMismatch[] = [];
  if (!Array.isArray(truth)) {
    throw new MisalignedReferenceError([
      { setIndex: 0, eventIndex: 0, expected: "a timeline array", found: typeof truth },
    ]);
  }
  if (truth.length !== history.length) {
    mismatches.push({
      setIndex: Math.min(truth.length, history.length),
      eventIndex: 0,
      expected: `${truth.length} event sets`,
      found: `${history.length} event sets`,
    });
    throw new MisalignedReferenceError(mismatches);
  }
  for (let i = 0; i < history.length; i++) {
    const got = history[i]!;
    const want = truth[i]!;
    if (got.timestamp !== want.timestamp) {
      mismatches.push({
        setIndex: i,
        eventIndex: 0,
        expected: `t=${want.timestamp}`,
        found: `t=${got.timestamp}`,
      });
      continue;
    }
    const n = Math.max(got.events.length, want.events.length);
    for (let j = 0; j < n; j++) {
      const gotKey = actionKey(got, j);
      const wantKey = actionKey(want, j);
      if (gotKey !== wantKey) {
        mismatches.push({
          setIndex: i,
          eventIndex: j,
          expected: wantKey,
          found: gotKey,
        });
      }
    }
  }
  if (mismatches.length > 0) {
    throw new MisalignedReferenceError(mismatches);
  }

  return history.map((set, i) =>
    set.events.map((event, j) => {
      const truthOutcome = truth[i]!.events[j]!.outcome;
      if (
        event.outcome?.variant === "numeric" &&
        truthOutcome?.variant === "numeric"
      ) {
        return bandFor(relativeError(truthOutcome.value, event.outcome.value));
      }
      return "none";
    }),
  );
}
