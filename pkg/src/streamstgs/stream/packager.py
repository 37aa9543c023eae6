"""Turn trained GOP models into an encoded, servable scene directory."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..codec import encode_gop
from .manifest import build_manifest, segment_path, write_scene_meta

DEFAULT_QPS = (16, 20, 24, 28, 32)


def cameras_meta_from_scene(scene) -> dict:
    cam = scene.cameras[0]
    return {
        "intrinsics": np.asarray(cam.intrinsics).tolist(),
        "width": cam.width,
        "height": cam.height,
        "orbit_center": [0.0, 0.0, 0.0],
        "orbit_radius": scene.spec.camera_radius,
    }


def encode_scene_dir(models, scene_dir, qps=DEFAULT_QPS, scene_id: str = "scene",
                     fps: float = 30.0, cameras_meta: dict | None = None):
    """Encode every (GOP, QP) segment and write meta.json; returns the manifest."""
    scene_dir = Path(scene_dir)
    models = list(models)
    if not models:
        raise ValueError("need at least one GOP model")
    gop_length = models[0].bank.gop_length
    write_scene_meta(scene_dir, scene_id, gop_length, fps, cameras_meta or {})
    (scene_dir / "segments").mkdir(parents=True, exist_ok=True)
    for g, model in enumerate(models):
        for qp in qps:
            segment_path(scene_dir, g, qp).write_bytes(encode_gop(model, qp=qp))
    return build_manifest(scene_dir)
