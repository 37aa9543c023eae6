import { describe, expect, it } from "vitest";

import { abrSelect, BandwidthEstimate } from "../src/abr.js";
import type { LadderLevel } from "../src/types.js";

const LADDER: LadderLevel[] = [
  { qp: 16, sizes: [247520], mean_frame_kb: 247.52 },
  { qp: 20, sizes: [173590], mean_frame_kb: 173.59 },
  { qp: 24, sizes: [121970], mean_frame_kb: 121.97 },
  { qp: 28, sizes: [87950], mean_frame_kb: 87.95 },
  { qp: 32, sizes: [68350], mean_frame_kb: 68.35 },
];

describe("abrSelect", () => {
  it("picks QP24 for the 6 MB/s budget example", () => {
    const est = new BandwidthEstimate(0.8);
    est.update(6e6, 1);
    const { level, stallRisk } = abrSelect(est, LADDER, 30);
    expect(level.qp).toBe(24);
    expect(stallRisk).toBe(false);
  });

  it("picks best quality when unconstrained", () => {
    const est = new BandwidthEstimate(0.8);
    est.update(1e12, 1);
    expect(abrSelect(est, LADDER, 30).level.qp).toBe(16);
  });

  it("raises stall risk when nothing fits", () => {
    const est = new BandwidthEstimate(0.8);
    est.update(10_000, 1);
    const { level, stallRisk } = abrSelect(est, LADDER, 30);
    expect(level.qp).toBe(32);
    expect(stallRisk).toBe(true);
  });

  it("rejects an empty ladder", () => {
    expect(() => abrSelect(new BandwidthEstimate(), [], 30)).toThrow();
  });

  it("EWMA mixes samples", () => {
    const est = new BandwidthEstimate(0.8, 0.5);
    est.update(1000, 1);
    est.update(3000, 1);
    expect(est.ewmaBps).toBe(2000);
  });
});
