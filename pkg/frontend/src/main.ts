// DOM wiring: canvas-less viewer (server-rendered frames in an <img>),
// orbit steering with the pointer, a bitrate selector, and a stats panel.
import { PlayerSession } from "./session.js";
import type { FrameUpdate } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const img = el<HTMLImageElement>("frame");
  const status = el<HTMLDivElement>("status");
  const statsPanel = el<HTMLPreElement>("stats");
  const selector = el<HTMLSelectElement>("bitrate");
  const retry = el<HTMLButtonElement>("retry");

  let lastUrl: string | null = null;
  const session = new PlayerSession(window.location.origin, {
    onFrame: (u: FrameUpdate) => {
      if (u.blobUrl) {
        if (lastUrl) URL.revokeObjectURL(lastUrl);
        img.src = u.blobUrl;
        lastUrl = u.blobUrl;
      }
      status.textContent = `GOP ${u.gop} frame ${u.frame} @ QP ${u.qp}`;
    },
  });

  try {
    const manifest = await session.connect();
    selector.innerHTML = "";
    const auto = document.createElement("option");
    auto.value = "auto";
    auto.textContent = "Auto (ABR)";
    selector.appendChild(auto);
    for (const level of manifest.qp_ladder) {
      const opt = document.createElement("option");
      opt.value = String(level.qp);
      opt.textContent = `QP ${level.qp} (${level.mean_frame_kb.toFixed(1)} KB/frame)`;
      selector.appendChild(opt);
    }
    status.textContent = `connected: ${manifest.scene_id}, ${manifest.gop_count} GOPs`;
  } catch (err) {
    status.textContent = `connection failed: ${String(err)}`;
    retry.hidden = false;
    retry.onclick = () => window.location.reload();
    return;
  }

  selector.onchange = () => {
    session.setBitrate(selector.value === "auto" ? "auto" : Number(selector.value));
  };

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  img.onpointerdown = (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    img.setPointerCapture(e.pointerId);
  };
  img.onpointermove = (e) => {
    if (!dragging) return;
    session.steer(e.clientX - lastX, e.clientY - lastY);
    lastX = e.clientX;
    lastY = e.clientY;
  };
  img.onpointerup = () => {
    dragging = false;
  };
  img.onwheel = (e) => {
    e.preventDefault();
    session.zoom(e.deltaY);
  };

  const fps = session.manifest?.fps ?? 30;
  setInterval(() => {
    void session.tick();
    const s = session.stats;
    statsPanel.textContent = [
      `qp          ${s.lastQp}`,
      `KB/frame    ${s.kbPerFrame.toFixed(2)}`,
      `render ms   ${s.renderMs.toFixed(1)}`,
      `stall risk  ${s.stallCount}`,
      `stale drops ${s.staleDropped}`,
      `errors      ${s.errorCount}`,
      `qp trace    ${session.qpTrace.slice(-12).join(" ")}`,
    ].join("\n");
  }, 1000 / Math.min(fps, 15));
}

void boot();
