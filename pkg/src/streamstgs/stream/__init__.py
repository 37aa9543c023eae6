from .abr import BandwidthEstimate, abr_select
from .client import PlaybackReport, client_play, fetch_manifest, measure_ttff
from .manifest import (
    LadderLevel,
    ManifestError,
    StreamManifest,
    build_manifest,
    segment_name,
    segment_path,
    write_scene_meta,
)
from .server import PoseError, SceneService, make_server, parse_pose, serve
from .throttle import TokenBucket

__all__ = [
    "BandwidthEstimate",
    "LadderLevel",
    "ManifestError",
    "PlaybackReport",
    "PoseError",
    "SceneService",
    "StreamManifest",
    "TokenBucket",
    "abr_select",
    "build_manifest",
    "client_play",
    "fetch_manifest",
    "make_server",
    "measure_ttff",
    "parse_pose",
    "segment_name",
    "segment_path",
    "serve",
    "write_scene_meta",
]
