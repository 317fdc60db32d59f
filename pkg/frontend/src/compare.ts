// Side-by-side comparison of a session and one of its branches. The branch
// copies the origin's first N event sets, so the panes share that prefix
// visually and diverge afterwards.

import type { Descriptor, WireEventSet } from "./types.js";

export interface Comparison {
  /** number of leading event sets the two panes have in common */
  sharedPrefix: number;
  /** set index where the right pane first differs; null if no divergence yet */
  divergenceIndex: number | null;
}

function sameSet(a: WireEventSet, b: WireEventSet): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}

export function compareTimelines(
  origin: WireEventSet[],
  branch: WireEventSet[],
): Comparison {
  let shared = 0;
  const limit = Math.min(origin.length, branch.length);
  while (shared < limit && sameSet(origin[shared]!, branch[shared]!)) {
    shared++;
  }
  const diverged = shared < origin.length || shared < branch.length;
  return { sharedPrefix: shared, divergenceIndex: diverged ? shared : null };
}

/**
 * Whether the branch control should be enabled for a given cut point.
 * Valid cut points are 0..history_length inclusive; anything else is
 * disabled client-side instead of round-tripping to a 416.
 */
export function branchAllowed(descriptor: Descriptor, atStep: number): boolean {
  return (
    Number.isInteger(atStep) && atStep >= 0 && atStep <= descriptor.history_length
  );
}
