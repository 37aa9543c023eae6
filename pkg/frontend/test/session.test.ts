// Contract tests against a scripted fixture server (no network).
import { beforeEach, describe, expect, it, vi } from "vitest";

import { PlayerSession } from "../src/session.js";
import type { RenderResult } from "../src/session.js";
import type { Manifest } from "../src/types.js";

const MANIFEST: Manifest = {
  scene_id: "fixture",
  gop_count: 4,
  gop_length: 5,
  fps: 30,
  qp_ladder: [
    { qp: 16, sizes: [200_000], mean_frame_kb: 40 },
    { qp: 24, sizes: [100_000], mean_frame_kb: 20 },
    { qp: 32, sizes: [50_000], mean_frame_kb: 10 },
  ],
  cameras: { orbit_radius: 4 },
  segment_template: "segment/{gop}/{qp}",
};

function stubManifestFetch(ok = true): void {
  vi.stubGlobal("fetch", vi.fn(async (url: string) => {
    if (!ok) throw new Error("connection refused");
    expect(url).toContain("/manifest");
    return { ok: true, status: 200, json: async () => MANIFEST } as Response;
  }));
}

function qpOf(url: string): number {
  return Number(new URL(url, "http://x").searchParams.get("qp"));
}

describe("PlayerSession", () => {
  beforeEach(() => {
    vi.unstubAllGlobals();
  });

  it("connect loads the manifest and starts at gop 0", async () => {
    stubManifestFetch();
    const session = new PlayerSession("http://fixture", { fetcher: async () => okResult() });
    const manifest = await session.connect();
    expect(manifest.qp_ladder).toHaveLength(3);
    expect(session.state.gop).toBe(0);
    expect(session.state.frame).toBe(0);
    expect(session.camera.radius).toBe(4);
  });

  it("surfaces a connection error without crashing", async () => {
    stubManifestFetch(false);
    const session = new PlayerSession("http://fixture");
    await expect(session.connect()).rejects.toThrow();
  });

  it("pinned mode requests only that QP", async () => {
    stubManifestFetch();
    const urls: string[] = [];
    const session = new PlayerSession("http://fixture", {
      fetcher: async (url) => {
        urls.push(url);
        return okResult();
      },
    });
    await session.connect();
    session.setBitrate(32);
    for (let i = 0; i < 12; i += 1) await session.tick();
    // QP re-chosen at GOP boundaries; all requests after pinning carry 32
    const after = urls.slice(5); // first GOP still plays the pre-pin choice
    expect(after.length).toBeGreaterThan(0);
    for (const u of after) expect(qpOf(u)).toBe(32);
  });

  it("rejects pinning a QP missing from the ladder", async () => {
    stubManifestFetch();
    const session = new PlayerSession("http://fixture", { fetcher: async () => okResult() });
    await session.connect();
    expect(() => session.setBitrate(99)).toThrow();
  });

  it("auto mode downshifts within one GOP of a throughput drop", async () => {
    stubManifestFetch();
    let fastLink = true;
    const session = new PlayerSession("http://fixture", {
      fetcher: async () => ({
        ok: true,
        bytes: 50_000,
        ms: fastLink ? 20 : 2_000, // 2.5 MB/s, then 25 KB/s
        blobUrl: null,
      }),
    });
    await session.connect();
    for (let i = 0; i < 5; i += 1) await session.tick(); // GOP 0 at the optimistic start
    expect(session.qpTrace[1]).toBe(16); // fast link keeps best quality
    fastLink = false;
    for (let i = 0; i < 10; i += 1) await session.tick(); // GOPs 1..2
    const trace = session.qpTrace;
    expect(trace[trace.length - 1]).toBeGreaterThan(16); // downshifted within one GOP
  });

  it("never displays stale responses (sequence-number order)", async () => {
    stubManifestFetch();
    const pending: Array<() => void> = [];
    const displayed: number[] = [];
    const session = new PlayerSession("http://fixture", {
      fetcher: (url) =>
        new Promise<RenderResult>((resolve) => {
          pending.push(() => resolve(okResult()));
        }),
      onFrame: (u) => displayed.push(u.seq),
    });
    await session.connect();
    const t0 = session.tick();
    const t1 = session.tick();
    const t2 = session.tick();
    // resolve out of order: newest first, then the stale ones
    pending[2]();
    await t2;
    pending[0]();
    await t0;
    pending[1]();
    await t1;
    expect(displayed).toEqual([2]);
    expect(session.stats.staleDropped).toBe(2);
    // displayed sequence stays monotone under later ticks
    const t3 = session.tick();
    pending[3]();
    await t3;
    expect(displayed).toEqual([2, 3]);
  });

  it("render errors increment the error counter", async () => {
    stubManifestFetch();
    const session = new PlayerSession("http://fixture", {
      fetcher: async () => ({ ok: false, bytes: 0, ms: 5, blobUrl: null }),
    });
    await session.connect();
    await session.tick();
    expect(session.stats.errorCount).toBe(1);
  });

  it("steering changes the requested pose", async () => {
    stubManifestFetch();
    const urls: string[] = [];
    const session = new PlayerSession("http://fixture", {
      fetcher: async (url) => {
        urls.push(url);
        return okResult();
      },
    });
    await session.connect();
    await session.tick();
    session.steer(200, 0);
    await session.tick();
    const pose0 = new URL(urls[0], "http://x").searchParams.get("pose");
    const pose1 = new URL(urls[1], "http://x").searchParams.get("pose");
    expect(pose0).not.toEqual(pose1);
  });

  it("stats expose KB/frame of the active ladder level", async () => {
    stubManifestFetch();
    const session = new PlayerSession("http://fixture", { fetcher: async () => okResult() });
    await session.connect();
    session.setBitrate(24);
    for (let i = 0; i < 6; i += 1) await session.tick();
    expect(session.stats.kbPerFrame).toBe(20);
  });
});

function okResult(): RenderResult {
  return { ok: true, bytes: 10_000, ms: 10, blobUrl: null };
}
