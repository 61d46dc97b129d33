import { describe, expect, it } from "vitest";

import {
  labelSpans,
  pointsToPolyline,
  seriesDuration,
  sharedTimeAxis,
  timelinePoints,
} from "../src/timeline.js";

describe("timelinePoints", () => {
  it("emits one point per step at stride-derived times", () => {
    const points = timelinePoints([0.1, 0.5, 0.9], 8, 24);
    expect(points).toHaveLength(3);
    expect(points.map((p) => p.t)).toEqual([0, 8 / 24, 16 / 24]);
  });

  it("passes score values through untouched", () => {
    const scores = [0.123456789, 0.987654321, 0.5];
    const points = timelinePoints(scores, 4, 30);
    expect(points.map((p) => p.value)).toEqual(scores);
  });
});

describe("sharedTimeAxis", () => {
  it("uses the longer duration of the pair", () => {
    const a = { count: 10, strideFrames: 8, fps: 24 };
    const b = { count: 4, strideFrames: 16, fps: 8 };
    expect(seriesDuration(a)).toBeCloseTo(10 * 8 / 24);
    expect(seriesDuration(b)).toBeCloseTo(8);
    expect(sharedTimeAxis(a, b)).toBeCloseTo(8);
    expect(sharedTimeAxis(a)).toBeCloseTo(seriesDuration(a));
  });
});

describe("pointsToPolyline", () => {
  it("renders one coordinate pair per point", () => {
    const points = timelinePoints([0.0, 0.5, 1.0], 8, 24);
    const path = pointsToPolyline(points, 800, 200, sharedTimeAxis({ count: 3, strideFrames: 8, fps: 24 }));
    expect(path.split(" ")).toHaveLength(3);
  });

  it("maps score 1 to the top and 0 to the bottom", () => {
    const path = pointsToPolyline(
      [
        { t: 0, value: 0 },
        { t: 1, value: 1 },
      ],
      100,
      50,
      2,
    );
    expect(path).toBe("0,50 50,0");
  });

  it("is deterministic", () => {
    const points = timelinePoints([0.2, 0.4, 0.8, 0.3], 8, 24);
    const a = pointsToPolyline(points, 800, 180, 2);
    const b = pointsToPolyline(points, 800, 180, 2);
    expect(a).toBe(b);
  });
});

describe("labelSpans", () => {
  it("merges consecutive positive steps", () => {
    const spans = labelSpans([0, 1, 1, 0, 1], 8, 8);
    expect(spans).toEqual([
      { start: 1, end: 3 },
      { start: 4, end: 5 },
    ]);
  });

  it("handles all-zero labels", () => {
    expect(labelSpans([0, 0, 0], 8, 24)).toEqual([]);
  });
});
