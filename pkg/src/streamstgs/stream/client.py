"""Streaming client: sequential GOP playback with keyframe pre-decode.

While GOP k plays, the client downloads GOP k+1 and pre-decodes its
attribute images (the keyframe payload), so only the feature video needs
just-in-time decoding at the GOP boundary. Playback runs on a virtual
timeline driven by measured wall-clock durations: a stall is a boundary
gap longer than one frame interval. The QP of each GOP comes from the
throughput-based ABR policy unless pinned.
"""
from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from io import BytesIO

import numpy as np

from ..codec import decode_features, decode_keyframe, parse_segment
from ..render import psnr, render_model_frame
from .abr import BandwidthEstimate, abr_select
from .manifest import StreamManifest
from .server import parse_pose


@dataclass
class GopPlayback:
    gop: int
    qp: int = -1
    byte_count: int = 0
    download_ms: float = 0.0
    keyframe_decode_ms: float = 0.0
    feature_decode_ms: float = 0.0
    stall_gap_ms: float = 0.0
    stalled: bool = False
    stall_risk: bool = False
    prefetched: bool = False
    retries: int = 0
    error: str = ""
    render_psnr: float | None = None


@dataclass
class PlaybackReport:
    manifest_url: str
    entries: list = field(default_factory=list)
    stalls: int = 0
    ttff_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"manifest_url": self.manifest_url, "stalls": self.stalls,
                           "ttff_ms": self.ttff_ms,
                           "entries": [asdict(e) for e in self.entries]}, indent=2)

    def qp_trace(self) -> list:
        return [e.qp for e in self.entries if not e.error]


def _get(url: str, timeout: float = 30.0) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def fetch_manifest(base_url: str) -> StreamManifest:
    return StreamManifest.from_json(_get(base_url.rstrip("/") + "/manifest").decode())


def _download_segment(base_url: str, gop: int, qp: int):
    t0 = time.monotonic()
    data = _get(f"{base_url.rstrip('/')}/segment/{gop}/{qp}")
    return data, (time.monotonic() - t0)


def _decode_keyframe_timed(data: bytes):
    t0 = time.monotonic()
    seg = parse_segment(data)
    model = decode_keyframe(seg)
    return seg, model, (time.monotonic() - t0)


def client_play(base_url: str, pinned_qp: int | None = None, safety: float = 0.8,
                max_gops: int | None = None, check_render: bool = False,
                pose: str | None = None, report_path=None) -> PlaybackReport:
    manifest = fetch_manifest(base_url)
    report = PlaybackReport(manifest_url=base_url)
    estimate = BandwidthEstimate(safety=safety)
    ladder = manifest.qp_ladder
    fps = manifest.fps
    gop_seconds = manifest.gop_length / fps
    frame_seconds = 1.0 / fps
    n_gops = manifest.gop_count if max_gops is None else min(max_gops, manifest.gop_count)

    prefetch = None  # (entry, seg, keyframe_model) prepared during the previous GOP
    clock = 0.0  # virtual playback time
    prev_play_start = 0.0

    for k in range(n_gops):
        if prefetch is not None and prefetch[0].gop == k:
            entry, seg, key_model = prefetch
            ready_at = prev_play_start + (entry.download_ms + entry.keyframe_decode_ms) / 1e3
            entry.prefetched = True
        else:
            entry, seg, key_model = _fetch_gop(base_url, k, ladder, estimate, fps, pinned_qp)
            ready_at = clock + (entry.download_ms + entry.keyframe_decode_ms) / 1e3
        prefetch = None

        if entry.error:
            report.entries.append(entry)
            continue

        t0 = time.monotonic()
        try:
            bank = decode_features(seg)
        except Exception as exc:
            entry.error = f"feature decode failed: {type(exc).__name__}: {exc}"
            report.entries.append(entry)
            continue
        entry.feature_decode_ms = (time.monotonic() - t0) * 1e3
        key_model.bank = bank

        start = max(clock, ready_at) + entry.feature_decode_ms / 1e3
        if k == 0:
            report.ttff_ms = start * 1e3
        else:
            gap = start - clock
            entry.stall_gap_ms = gap * 1e3
            entry.stalled = gap > frame_seconds
            if entry.stalled:
                report.stalls += 1

        if check_render:
            pose_str = pose or f"0.0,0.3,{manifest.cameras.get('orbit_radius', 4.0)}"
            cam = parse_pose(pose_str, manifest.cameras)
            local = render_model_frame(key_model, 0, cam)
            png = _get(f"{base_url.rstrip('/')}/render?gop={k}&qp={entry.qp}&frame=0&pose={pose_str}")
            from PIL import Image

            remote = np.asarray(Image.open(BytesIO(png)).convert("RGB"), dtype=np.float64) / 255.0
            entry.render_psnr = psnr(local.rgb, remote)

        prev_play_start = start
        clock = start + gop_seconds
        report.entries.append(entry)

        if k + 1 < n_gops:  # prefetch + keyframe pre-decode during playback
            nxt, seg_n, model_n = _fetch_gop(base_url, k + 1, ladder, estimate, fps, pinned_qp)
            prefetch = (nxt, seg_n, model_n)

    if report_path is not None:
        with open(report_path, "w") as fh:
            fh.write(report.to_json())
    return report


def _fetch_gop(base_url: str, gop: int, ladder, estimate: BandwidthEstimate,
               fps: float, pinned_qp: int | None):
    entry = GopPlayback(gop=gop)
    if pinned_qp is not None:
        level = next((l for l in ladder if l.qp == pinned_qp), None)
        if level is None:
            entry.error = f"pinned qp {pinned_qp} not in ladder"
            return entry, None, None
        stall_risk = False
    elif estimate.ewma_bps <= 0:
        level, stall_risk = ladder[0], False  # optimistic start, then measured
    else:
        level, stall_risk = abr_select(estimate, ladder, fps)
    entry.qp = level.qp
    entry.stall_risk = stall_risk

    qp_index = next(i for i, l in enumerate(ladder) if l.qp == level.qp)
    for attempt in range(3):
        try:
            data, seconds = _download_segment(base_url, gop, entry.qp)
            estimate.update(len(data), seconds)
            entry.byte_count = len(data)
            entry.download_ms += seconds * 1e3
            break
        except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
            entry.retries += 1
            if attempt == 0:
                continue  # retry once at the same level
            if attempt == 1 and qp_index + 1 < len(ladder):
                qp_index += 1  # then downshift quality
                entry.qp = ladder[qp_index].qp
                continue
            entry.error = f"download failed: {exc}"
            return entry, None, None
    try:
        seg, model, kf_s = _decode_keyframe_timed(data)
    except Exception as exc:
        entry.error = f"keyframe decode failed: {type(exc).__name__}: {exc}"
        return entry, None, None
    entry.keyframe_decode_ms = kf_s * 1e3
    return entry, seg, model


def measure_ttff(base_url: str, gop: int, qp: int | None = None) -> float:
    """Cold-start time to the first rendered frame of one GOP (seconds).

    Touches only GOP ``gop``'s bytes: one segment download, keyframe +
    feature decode, then a local reconstruction of its first frame.
    """
    manifest = fetch_manifest(base_url)
    level_qp = qp if qp is not None else manifest.qp_ladder[-1].qp
    t0 = time.monotonic()
    data = _get(f"{base_url.rstrip('/')}/segment/{gop}/{level_qp}")
    seg = parse_segment(data)
    model = decode_keyframe(seg)
    model.bank = decode_features(seg)
    cam = parse_pose(f"0.0,0.3,{manifest.cameras.get('orbit_radius', 4.0)}", manifest.cameras)
    render_model_frame(model, 0, cam)
    return time.monotonic() - t0
