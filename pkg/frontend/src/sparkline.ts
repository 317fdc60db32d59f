// Per-analyte sparklines as plain SVG path strings, so the overlay logic is
// testable without a DOM. One polyline per session; the branch-compare view
// overlays two on a shared scale.

import type { WireEventSet } from "./types.js";

export interface SeriesPoint {
  t: number;
  value: number;
}

/** Chronological numeric readings of one analyte code. */
export function extractSeries(
  history: WireEventSet[],
  code: string,
): SeriesPoint[] {
  const points: SeriesPoint[] = [];
  for (const set of history) {
    for (const event of set.events) {
      if (
        event.action.kind === "inquiry" &&
        event.action.code === code &&
        event.outcome?.variant === "numeric"
      ) {
        points.push({ t: set.timestamp, value: event.outcome.value });
      }
    }
  }
  return points;
}

/** Every analyte code with at least one numeric reading, sorted. */
export function numericCodes(history: WireEventSet[]): string[] {
  const codes = new Set<string>();
  for (const set of history) {
    for (const event of set.events) {
      if (event.action.kind === "inquiry" && event.outcome?.variant === "numeric") {
        codes.add(event.action.code);
      }
    }
  }
  return [...codes].sort();
}

export interface Scale {
  tMin: number;
  tMax: number;
  vMin: number;
  vMax: number;
}

export function sharedScale(series: SeriesPoint[][]): Scale | null {
  const all = series.flat();
  if (all.length === 0) return null;
  const ts = all.map((p) => p.t);
  const vs = all.map((p) => p.value);
  return {
    tMin: Math.min(...ts),
    tMax: Math.max(...ts),
    vMin: Math.min(...vs),
    vMax: Math.max(...vs),
  };
}

/**
 * "M x,y L x,y ..." in a width x height box, y flipped so larger values sit
 * higher. Degenerate ranges (single point, flat series) center instead of
 * dividing by zero.
 */
export function toPath(
  points: SeriesPoint[],
  scale: Scale,
  width: number,
  height: number,
): string {
  if (points.length === 0) return "";
  const spanT = scale.tMax - scale.tMin;
  const spanV = scale.vMax - scale.vMin;
  const x = (t: number) =>
    spanT === 0 ? width / 2 : ((t - scale.tMin) / spanT) * width;
  const y = (v: number) =>
    spanV === 0 ? height / 2 : height - ((v - scale.vMin) / spanV) * height;
  return points
    .map(
      (p, i) =>
        `${i === 0 ? "M" : "L"}${x(p.t).toFixed(1)},${y(p.value).toFixed(1)}`,
    )
    .join(" ");
}

export interface Overlay {
  originPath: string;
  branchPath: string;
  /** x pixel of the first post-divergence timestamp, null while identical */
  divergenceX: number | null;
}

export function overlay(
  origin: WireEventSet[],
  branch: WireEventSet[],
  code: string,
  width: number,
  height: number,
  divergenceIndex: number | null,
): Overlay | null {
  const a = extractSeries(origin, code);
  const b = extractSeries(branch, code);
  const scale = sharedScale([a, b]);
  if (scale === null) return null;
  let divergenceX: number | null = null;
  if (divergenceIndex !== null) {
    const firstDiverged =
      branch[divergenceIndex] ?? origin[divergenceIndex] ?? null;
    if (firstDiverged !== null) {
      const spanT = scale.tMax - scale.tMin;
      divergenceX =
        spanT === 0
          ? width / 2
          : ((firstDiverged.timestamp - scale.tMin) / spanT) * width;
    }
  }
  return {
    originPath: toPath(a, scale, width, height),
    branchPath: toPath(b, scale, width, height),
    divergenceX,
  };
}
