"""Scene manifests: what the server advertises and the client plays from.

An encoded scene directory holds ``meta.json`` (scene id, GOP length, fps,
camera metadata) plus ``segments/gopNNNN_qpQQ.stgs``. The manifest
enumerates every (gop, qp) segment with its exact byte size and validates
that the QP ladder is complete and rate-monotone.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

SEGMENT_RE = re.compile(r"gop(\d{4})_qp(\d{2})\.stgs$")
SEGMENT_TEMPLATE = "segment/{gop}/{qp}"


class ManifestError(Exception):
    pass


@dataclass
class LadderLevel:
    qp: int
    sizes: list  # exact bytes per GOP
    mean_frame_kb: float


@dataclass
class StreamManifest:
    scene_id: str
    gop_count: int
    gop_length: int
    fps: float
    qp_ladder: list = field(default_factory=list)  # LadderLevel, QP ascending
    cameras: dict = field(default_factory=dict)
    segment_template: str = SEGMENT_TEMPLATE

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StreamManifest":
        d = json.loads(text)
        d["qp_ladder"] = [LadderLevel(**lvl) for lvl in d["qp_ladder"]]
        return cls(**d)

    def level_for_qp(self, qp: int) -> LadderLevel:
        for lvl in self.qp_ladder:
            if lvl.qp == qp:
                return lvl
        raise ManifestError(f"QP {qp} not in ladder {[l.qp for l in self.qp_ladder]}")


def segment_name(gop: int, qp: int) -> str:
    return f"gop{gop:04d}_qp{qp:02d}.stgs"


def segment_path(scene_dir: Path, gop: int, qp: int) -> Path:
    return Path(scene_dir) / "segments" / segment_name(gop, qp)


def write_scene_meta(scene_dir: Path, scene_id: str, gop_length: int, fps: float,
                     cameras: dict) -> None:
    meta = {"scene_id": scene_id, "gop_length": gop_length, "fps": fps, "cameras": cameras}
    Path(scene_dir).mkdir(parents=True, exist_ok=True)
    (Path(scene_dir) / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def build_manifest(scene_dir) -> StreamManifest:
    """Scan an encoded scene directory; fail loudly on ladder holes."""
    scene_dir = Path(scene_dir)
    meta_path = scene_dir / "meta.json"
    if not meta_path.exists():
        raise ManifestError(f"missing meta.json under {scene_dir}")
    meta = json.loads(meta_path.read_text())

    seg_dir = scene_dir / "segments"
    found: dict = {}
    for p in sorted(seg_dir.glob("*.stgs")) if seg_dir.exists() else []:
        m = SEGMENT_RE.search(p.name)
        if not m:
            continue
        gop, qp = int(m.group(1)), int(m.group(2))
        found.setdefault(qp, {})[gop] = p.stat().st_size
    if not found:
        raise ManifestError(f"no segments found under {seg_dir}")

    gops = sorted({g for per_qp in found.values() for g in per_qp})
    gop_count = max(gops) + 1
    ladder = []
    for qp in sorted(found):
        sizes = []
        for g in range(gop_count):
            if g not in found[qp]:
                raise ManifestError(f"missing segment (gop={g}, qp={qp})")
            sizes.append(found[qp][g])
        mean_frame_kb = sum(sizes) / gop_count / meta["gop_length"] / 1000.0
        ladder.append(LadderLevel(qp=qp, sizes=sizes, mean_frame_kb=mean_frame_kb))

    for lo, hi in zip(ladder, ladder[1:]):
        for g in range(gop_count):
            if hi.sizes[g] > lo.sizes[g]:
                raise ManifestError(
                    f"ladder not rate-monotone at gop {g}: qp{hi.qp} larger than qp{lo.qp}")

    return StreamManifest(
        scene_id=meta["scene_id"], gop_count=gop_count, gop_length=meta["gop_length"],
        fps=meta["fps"], qp_ladder=ladder, cameras=meta.get("cameras", {}),
    )
