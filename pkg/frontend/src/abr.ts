// Throughput-rule bitrate selection, mirroring the server-side policy:
// lowest QP whose mean frame bytes * fps fits under safety * throughput.
import type { LadderLevel } from "./types.js";

export class BandwidthEstimate {
  ewmaBps = 0;
  readonly safety: number;
  readonly smoothing: number;

  constructor(safety = 0.8, smoothing = 0.5) {
    this.safety = safety;
    this.smoothing = smoothing;
  }

  update(byteCount: number, seconds: number): void {
    if (seconds <= 0) return;
    const sample = byteCount / seconds;
    this.ewmaBps = this.ewmaBps <= 0 ? sample : this.smoothing * sample + (1 - this.smoothing) * this.ewmaBps;
  }
}

export interface AbrChoice {
  level: LadderLevel;
  stallRisk: boolean;
}

export function abrSelect(estimate: BandwidthEstimate, ladder: LadderLevel[], fps: number): AbrChoice {
  if (ladder.length === 0) throw new Error("empty QP ladder");
  const budget = estimate.safety * estimate.ewmaBps;
  for (const level of ladder) {
    if (level.mean_frame_kb * 1000 * fps <= budget) return { level, stallRisk: false };
  }
  return { level: ladder[ladder.length - 1], stallRisk: true };
}
