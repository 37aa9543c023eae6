"""HTTP segment/render service over an encoded scene directory.

Endpoints (HTTP/1.1, stdlib ThreadingHTTPServer):

    GET /manifest              manifest JSON
    GET /segment/{gop}/{qp}    segment bytes (single-range requests honored)
    GET /render?gop&frame&qp&pose   server-side reconstruction as PNG
    GET /stats                 byte/render counters and mean timings
    GET /viewer/...            static viewer bundle, when one is configured

Every response carries an ``X-Scene-Version`` header (hash of the manifest).
Encoded data is immutable after startup; decoded models are cached per
(gop, qp) with single-writer initialization. An optional token bucket
throttles all response bodies for ABR experiments.
"""
from __future__ import annotations

import hashlib
import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from ..codec import decode_gop
from ..core import CameraModel
from ..render import render_model_frame
from .manifest import build_manifest, segment_path
from .throttle import TokenBucket

CHUNK = 16384


class PoseError(ValueError):
    pass


def parse_pose(text: str, cameras_meta: dict) -> CameraModel:
    """Pose = 16 comma-separated floats (row-major world-to-camera) or
    orbit shorthand ``theta,phi,radius`` around the scene's orbit center."""
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise PoseError(f"pose is not a comma-separated float list: {exc}") from exc
    k = np.asarray(cameras_meta.get("intrinsics"), dtype=np.float64)
    width = int(cameras_meta.get("width"))
    height = int(cameras_meta.get("height"))
    if len(parts) == 3:
        theta, phi, radius = parts
        if radius <= 0:
            raise PoseError("orbit radius must be positive")
        center = np.asarray(cameras_meta.get("orbit_center", [0.0, 0.0, 0.0]))
        eye = center + radius * np.array(
            [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)])
        from ..scenes import _look_at

        return CameraModel(k, _look_at(eye, center), width, height)
    if len(parts) == 16:
        w2c = np.asarray(parts, dtype=np.float64).reshape(4, 4)
        try:
            return CameraModel(k, w2c, width, height)
        except ValueError as exc:
            raise PoseError(str(exc)) from exc
    raise PoseError(f"pose needs 3 (orbit) or 16 (matrix) floats, got {len(parts)}")


class SceneService:
    """Shared state behind the request handler."""

    def __init__(self, scene_dir, throttle_bytes_per_sec: float | None = None,
                 viewer_dir=None):
        self.scene_dir = Path(scene_dir)
        self.manifest = build_manifest(scene_dir)
        self.manifest_bytes = self.manifest.to_json().encode()
        self.scene_version = hashlib.sha1(self.manifest_bytes).hexdigest()[:16]
        self.throttle = TokenBucket(throttle_bytes_per_sec) if throttle_bytes_per_sec else None
        self.viewer_dir = Path(viewer_dir) if viewer_dir else None
        self._models: dict = {}
        self._model_locks: dict = {}
        self._lock = threading.Lock()
        self.stats = {"bytes_served": 0, "segments_served": 0, "renders": 0,
                      "render_ms_total": 0.0, "decode_ms_total": 0.0, "decodes": 0}

    def record(self, **kw) -> None:
        with self._lock:
            for k, v in kw.items():
                self.stats[k] += v

    def stats_json(self) -> bytes:
        with self._lock:
            view = dict(self.stats)
        view["mean_render_ms"] = (view["render_ms_total"] / view["renders"]) if view["renders"] else 0.0
        view["mean_decode_ms"] = (view["decode_ms_total"] / view["decodes"]) if view["decodes"] else 0.0
        return json.dumps(view, sort_keys=True).encode()

    def segment_bytes(self, gop: int, qp: int) -> bytes:
        path = segment_path(self.scene_dir, gop, qp)
        if not path.exists():
            raise FileNotFoundError(f"no segment gop={gop} qp={qp}")
        return path.read_bytes()

    def model(self, gop: int, qp: int):
        key = (gop, qp)
        with self._lock:
            if key in self._models:
                return self._models[key]
            lock = self._model_locks.setdefault(key, threading.Lock())
        with lock:
            with self._lock:
                if key in self._models:
                    return self._models[key]
            t0 = time.monotonic()
            model = decode_gop(self.segment_bytes(gop, qp))
            self.record(decode_ms_total=(time.monotonic() - t0) * 1e3, decodes=1)
            with self._lock:
                self._models[key] = model
            return model

    def render_png(self, gop: int, frame: int, qp: int, pose: str) -> bytes:
        model = self.model(gop, qp)
        if not 0 <= frame < model.bank.gop_length:
            raise PoseError(f"frame {frame} outside [0, {model.bank.gop_length})")
        cam = parse_pose(pose, self.manifest.cameras)
        t0 = time.monotonic()
        img = render_model_frame(model, frame, cam)
        self.record(render_ms_total=(time.monotonic() - t0) * 1e3, renders=1)
        buf = io.BytesIO()
        Image.fromarray(img.to_uint8()).save(buf, format="PNG")
        return buf.getvalue()


class _Handler(BaseHTTPRequestHandler):
    service: SceneService = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _write_body(self, body: bytes) -> None:
        throttle = self.service.throttle
        for off in range(0, len(body), CHUNK):
            chunk = body[off : off + CHUNK]
            if throttle is not None:
                throttle.consume(len(chunk))
            self.wfile.write(chunk)
        self.service.record(bytes_served=len(body))

    def _send(self, code: int, body: bytes, ctype: str = "application/json",
              extra: dict | None = None) -> None:
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("X-Scene-Version", self.service.scene_version)
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self._write_body(body)

    def _error(self, code: int, reason: str) -> None:
        self._send(code, json.dumps({"error": reason}).encode())

    def do_GET(self):  # noqa: N802 - http.server API
        try:
            self._route()
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - last-resort 500
            try:
                self._error(500, f"{type(exc).__name__}: {exc}")
            except Exception:
                pass

    def _route(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if url.path == "/manifest":
            self._send(200, self.service.manifest_bytes)
        elif len(parts) == 3 and parts[0] == "segment":
            self._serve_segment(parts[1], parts[2])
        elif url.path == "/render":
            self._serve_render(parse_qs(url.query))
        elif url.path == "/stats":
            self._send(200, self.service.stats_json())
        elif parts and parts[0] == "viewer":
            self._serve_viewer(parts[1:])
        else:
            self._error(404, f"unknown path {url.path}")

    def _serve_segment(self, gop_s: str, qp_s: str):
        try:
            gop, qp = int(gop_s), int(qp_s)
            body = self.service.segment_bytes(gop, qp)
        except (ValueError, FileNotFoundError):
            self._error(404, f"unknown segment gop={gop_s} qp={qp_s}")
            return
        self.service.record(segments_served=1)
        etag = hashlib.sha1(body).hexdigest()[:20]
        rng = self.headers.get("Range")
        if rng and rng.startswith("bytes="):
            try:
                lo_s, hi_s = rng[len("bytes="):].split("-", 1)
                lo = int(lo_s) if lo_s else 0
                hi = int(hi_s) if hi_s else len(body) - 1
                if lo > hi or hi >= len(body):
                    raise ValueError
            except ValueError:
                self._error(416, f"bad range {rng}")
                return
            part = body[lo : hi + 1]
            self._send(206, part, "application/octet-stream",
                       {"ETag": etag, "Content-Range": f"bytes {lo}-{hi}/{len(body)}"})
            return
        self._send(200, body, "application/octet-stream", {"ETag": etag})

    def _serve_render(self, query: dict):
        try:
            gop = int(query["gop"][0])
            frame = int(query["frame"][0])
            qp = int(query.get("qp", [self.service.manifest.qp_ladder[0].qp])[0])
            pose = query["pose"][0]
        except (KeyError, ValueError, IndexError) as exc:
            self._error(400, f"render needs gop, frame, pose (and optional qp): {exc}")
            return
        try:
            png = self.service.render_png(gop, frame, qp, pose)
        except FileNotFoundError:
            self._error(404, f"unknown segment gop={gop} qp={qp}")
            return
        except PoseError as exc:
            self._error(400, str(exc))
            return
        self._send(200, png, "image/png")

    def _serve_viewer(self, rel_parts):
        root = self.service.viewer_dir
        if root is None:
            self._error(404, "no viewer bundle configured")
            return
        rel = "/".join(rel_parts) or "index.html"
        path = (root / rel).resolve()
        if not str(path).startswith(str(root.resolve())) or not path.is_file():
            self._error(404, f"viewer file {rel!r} not found")
            return
        ctype = {"html": "text/html", "js": "text/javascript", "css": "text/css",
                 "map": "application/json"}.get(path.suffix.lstrip("."), "application/octet-stream")
        self._send(200, path.read_bytes(), ctype)


def make_server(scene_dir, bind: str = "127.0.0.1:0",
                throttle_bytes_per_sec: float | None = None,
                viewer_dir=None) -> ThreadingHTTPServer:
    """Bind the service; caller runs serve_forever() (or .shutdown())."""
    host, _, port_s = bind.partition(":")
    service = SceneService(scene_dir, throttle_bytes_per_sec, viewer_dir)
    handler = type("Handler", (_Handler,), {"service": service})
    httpd = ThreadingHTTPServer((host or "127.0.0.1", int(port_s or 0)), handler)
    httpd.service = service
    return httpd


def serve(scene_dir, bind: str = "127.0.0.1:8080",
          throttle_bytes_per_sec: float | None = None, viewer_dir=None) -> None:
    httpd = make_server(scene_dir, bind, throttle_bytes_per_sec, viewer_dir)
    host, port = httpd.server_address[:2]
    print(f"serving {scene_dir} on http://{host}:{port} "
          f"(throttle: {throttle_bytes_per_sec or 'none'} B/s)")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        httpd.shutdown()
