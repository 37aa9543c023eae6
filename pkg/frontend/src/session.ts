// Playback session: frame ticking, render requests with sequence-number
// reconciliation (stale responses are never displayed), and per-GOP QP
// selection via pinned mode or the throughput rule.
import { abrSelect, BandwidthEstimate } from "./abr.js";
import { OrbitCamera } from "./orbit.js";
import type { BitrateMode, Manifest, ViewerState, ViewerStats } from "./types.js";

export interface RenderResult {
  ok: boolean;
  bytes: number;
  ms: number;
  blobUrl: string | null;
}

export type RenderFetcher = (url: string) => Promise<RenderResult>;

export interface FrameUpdate {
  seq: number;
  gop: number;
  frame: number;
  qp: number;
  blobUrl: string | null;
}

export interface SessionOptions {
  fetcher?: RenderFetcher;
  onFrame?: (update: FrameUpdate) => void;
  safety?: number;
}

async function defaultFetcher(url: string): Promise<RenderResult> {
  const t0 = performance.now();
  const resp = await fetch(url);
  if (!resp.ok) return { ok: false, bytes: 0, ms: performance.now() - t0, blobUrl: null };
  const blob = await resp.blob();
  return {
    ok: true,
    bytes: blob.size,
    ms: performance.now() - t0,
    blobUrl: URL.createObjectURL(blob),
  };
}

export class PlayerSession {
  readonly baseUrl: string;
  manifest: Manifest | null = null;
  readonly camera = new OrbitCamera();
  mode: BitrateMode = "auto";
  gop = 0;
  frame = 0;
  stats: ViewerStats = { lastQp: -1, kbPerFrame: 0, renderMs: 0, stallCount: 0, staleDropped: 0, errorCount: 0 };
  qpTrace: number[] = [];

  private readonly fetcher: RenderFetcher;
  private readonly onFrame: (u: FrameUpdate) => void;
  private readonly estimate: BandwidthEstimate;
  private nextSeq = 0;
  private displayedSeq = -1;
  private gopQp = -1;

  constructor(baseUrl: string, opts: SessionOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetcher = opts.fetcher ?? defaultFetcher;
    this.onFrame = opts.onFrame ?? (() => undefined);
    this.estimate = new BandwidthEstimate(opts.safety ?? 0.8);
  }

  async connect(): Promise<Manifest> {
    const resp = await fetch(`${this.baseUrl}/manifest`);
    if (!resp.ok) throw new Error(`manifest fetch failed: HTTP ${resp.status}`);
    this.manifest = (await resp.json()) as Manifest;
    if (this.manifest.cameras.orbit_radius) this.camera.radius = this.manifest.cameras.orbit_radius;
    this.gop = 0;
    this.frame = 0;
    this.gopQp = this.chooseQp();
    this.qpTrace = [this.gopQp];
    return this.manifest;
  }

  get state(): ViewerState {
    return {
      theta: this.camera.theta,
      phi: this.camera.phi,
      radius: this.camera.radius,
      target: [0, 0, 0],
      gop: this.gop,
      frame: this.frame,
      mode: this.mode,
      stats: { ...this.stats },
    };
  }

  setBitrate(mode: BitrateMode): void {
    if (typeof mode === "number" && this.manifest) {
      if (!this.manifest.qp_ladder.some((l) => l.qp === mode)) {
        throw new Error(`QP ${mode} not in ladder`);
      }
    }
    this.mode = mode;
  }

  steer(dx: number, dy: number): void {
    this.camera.drag(dx, dy);
  }

  zoom(deltaY: number): void {
    this.camera.wheel(deltaY);
  }

  private chooseQp(): number {
    const m = this.manifest;
    if (!m) throw new Error("not connected");
    if (typeof this.mode === "number") return this.mode;
    if (this.estimate.ewmaBps <= 0) return m.qp_ladder[0].qp; // optimistic start
    const { level, stallRisk } = abrSelect(this.estimate, m.qp_ladder, m.fps);
    if (stallRisk) this.stats.stallCount += 1;
    return level.qp;
  }

  /** Advance one playback frame and request its render. */
  async tick(): Promise<void> {
    const m = this.manifest;
    if (!m) throw new Error("not connected");
    const seq = this.nextSeq++;
    const gop = this.gop;
    const frame = this.frame;
    const qp = this.gopQp;
    const url = `${this.baseUrl}/render?gop=${gop}&frame=${frame}&qp=${qp}&pose=${this.camera.pose()}`;

    this.frame += 1;
    if (this.frame >= m.gop_length) {
      this.frame = 0;
      this.gop = (this.gop + 1) % m.gop_count;
      this.gopQp = this.chooseQp(); // QP is re-chosen once per GOP
      this.qpTrace.push(this.gopQp);
    }

    const result = await this.fetcher(url);
    if (!result.ok) {
      this.stats.errorCount += 1;
      return;
    }
    this.estimate.update(result.bytes, result.ms / 1000);
    if (seq <= this.displayedSeq) {
      this.stats.staleDropped += 1; // a newer frame has already been shown
      return;
    }
    this.displayedSeq = seq;
    this.stats.lastQp = qp;
    this.stats.renderMs = result.ms;
    const level = m.qp_ladder.find((l) => l.qp === qp);
    this.stats.kbPerFrame = level ? level.mean_frame_kb : 0;
    this.onFrame({ seq, gop, frame, qp, blobUrl: result.blobUrl });
  }
}
