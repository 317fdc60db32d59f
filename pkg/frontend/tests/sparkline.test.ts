import { describe, expect, it } from "vitest";

import {
  extractSeries,
  numericCodes,
  overlay,
  sharedScale,
  toPath,
} from "../src/sparkline.js";
import { eventSet, inquiry, intervention, labelInquiry } from "./helpers.js";

const HISTORY = [
  eventSet(0, inquiry("sodium", 140), inquiry("lactate", 1.5)),
  eventSet(60, intervention("saline"), inquiry("sodium", 142)),
  eventSet(120, labelInquiry("culture", ["growth"]), inquiry("sodium", 141)),
];

describe("extractSeries", () => {
  it("collects only numeric inquiries of the requested code, in order", () => {
    expect(extractSeries(HISTORY, "sodium")).toEqual([
      { t: 0, value: 140 },
      { t: 60, value: 142 },
      { t: 120, value: 141 },
    ]);
    expect(extractSeries(HISTORY, "lactate")).toEqual([{ t: 0, value: 1.5 }]);
    expect(extractSeries(HISTORY, "culture")).toEqual([]);
  });
});

describe("numericCodes", () => {
  it("lists codes with numeric readings, sorted, once", () => {
    expect(numericCodes(HISTORY)).toEqual(["lactate", "sodium"]);
  });
});

describe("toPath", () => {
  it("normalizes into the box with larger values higher", () => {
    const scale = sharedScale([[{ t: 0, value: 0 }, { t: 10, value: 5 }]])!;
    const path = toPath(
      [
        { t: 0, value: 0 },
        { t: 10, value: 5 },
      ],
      scale,
      100,
      40,
    );
    // min value sits at the bottom (y=40), max at the top (y=0)
    expect(path).toBe("M0.0,40.0 L100.0,0.0");
  });

  it("centers degenerate ranges instead of dividing by zero", () => {
    const flat = [
      { t: 0, value: 7 },
      { t: 10, value: 7 },
    ];
    const scale = sharedScale([flat])!;
    expect(toPath(flat, scale, 100, 40)).toBe("M0.0,20.0 L100.0,20.0");
    const single = [{ t: 5, value: 3 }];
    const singleScale = sharedScale([single])!;
    expect(toPath(single, singleScale, 100, 40)).toBe("M50.0,20.0");
  });

  it("is empty for an empty series", () => {
    const scale = sharedScale([[{ t: 0, value: 1 }]])!;
    expect(toPath([], scale, 100, 40)).toBe("");
  });
});

describe("overlay", () => {
  it("draws both panes on a shared scale and marks the divergence x", () => {
    const branch = [
      HISTORY[0]!,
      HISTORY[1]!,
      eventSet(120, inquiry("sodium", 150)),
    ];
    const figure = overlay(HISTORY, branch, "sodium", 200, 50, 2)!;
    expect(figure.originPath.startsWith("M0.0,")).toBe(true);
    expect(figure.branchPath.endsWith("L200.0,0.0")).toBe(true); // 150 is the shared max
    expect(figure.divergenceX).toBe(200); // diverged set sits at t=120, the right edge
  });

  it("omits the divergence mark while the panes are identical", () => {
    const figure = overlay(HISTORY, HISTORY, "sodium", 200, 50, null)!;
    expect(figure.divergenceX).toBeNull();
    expect(figure.originPath).toBe(figure.branchPath);
  });

  it("returns null when the code has no numeric data in either pane", () => {
    expect(overlay(HISTORY, HISTORY, "culture", 200, 50, null)).toBeNull();
  });
});
