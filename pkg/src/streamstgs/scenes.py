"""Deterministic synthetic multi-view dynamic scenes.

Ground truth is itself a set of moving Gaussians (rigid translation,
rotation about an axis, sinusoidal oscillation, plus a static background
cluster), so a trained model can in principle fit it exactly and codec or
training error is never confounded with representational error. Cameras sit
on a ring around the origin; ground-truth images are rendered through the
same splat renderer the rest of the system uses.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import CameraModel, GaussianSet
from .render import render_image

MOTIONS = ("static", "translation", "rotation", "oscillation", "multi")


@dataclass(frozen=True)
class SceneSpec:
    n_static: int = 200
    n_dynamic: int = 100
    motion: str = "oscillation"
    gop_length: int = 20
    cameras: int = 8
    resolution: int = 64
    seed: int = 0
    camera_radius: float = 4.0
    amplitude: float = 0.45

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}; one of {MOTIONS}")
        if self.n_static < 0 or self.n_dynamic < 0:
            raise ValueError("counts must be nonnegative")
        if self.resolution > 256:
            raise ValueError("desk-scale scenes cap at 256x256")
        if self.camera_radius <= 0:
            raise ValueError("degenerate camera rig (radius 0)")
        if not 8 <= self.cameras <= 12:
            raise ValueError("camera ring uses 8..12 cameras")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls(**json.loads(text))


def _look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    w = np.eye(4)
    w[:3, :3] = np.stack([x, y, z])
    w[:3, 3] = -w[:3, :3] @ eye
    return w


def camera_ring(count: int, radius: float, resolution: int, focal: float | None = None,
                height: float = 1.2) -> list:
    if focal is None:
        focal = resolution * 1.1
    k = np.array([[focal, 0.0, resolution / 2], [0.0, focal, resolution / 2], [0.0, 0.0, 1.0]])
    cams = []
    for c in range(count):
        theta = 2.0 * np.pi * c / count
        eye = np.array([radius * np.cos(theta), radius * np.sin(theta), height])
        cams.append(CameraModel(k, _look_at(eye, np.zeros(3)), resolution, resolution))
    return cams


@dataclass
class SyntheticScene:
    spec: SceneSpec
    trajectories: np.ndarray  # (G, N, 3) ground-truth positions per frame
    scales: np.ndarray  # (N, 3) log-scale
    rotations: np.ndarray  # (N, 4)
    opacities: np.ndarray  # (N, 1) logit
    base_colors: np.ndarray  # (N, 3) >= 0
    dynamic_indices: np.ndarray
    static_indices: np.ndarray
    cameras: list = field(default_factory=list)
    images: np.ndarray = None  # (G, C, H, W, 3)
    gt_masks: np.ndarray = None  # (C, H, W) bool: changing-coverage footprint

    @property
    def count(self) -> int:
        return self.trajectories.shape[1]

    def gaussians_at(self, frame: int) -> GaussianSet:
        return GaussianSet(self.trajectories[frame].copy(), self.scales.copy(),
                           self.rotations.copy(), self.opacities.copy(), self.base_colors.copy())

    def initial_points(self, noise: float = 0.02, seed: int = 0,
                       dynamic_fraction: float = 1.0, floaters: int = 0):
        """Noisy sample of frame-0 geometry, standing in for SfM output.

        ``dynamic_fraction`` keeps only that share of dynamic points (SfM
        under-reconstructs moving geometry); ``floaters`` appends spurious
        points far below the floor, outside every camera's view.
        """
        rng = np.random.default_rng(seed)
        pos = self.trajectories[0] + rng.normal(0, noise, (self.count, 3))
        col = np.clip(self.base_colors + rng.normal(0, noise, (self.count, 3)), 0.0, None)
        if dynamic_fraction < 1.0 and self.dynamic_indices.size:
            n_keep = max(1, int(round(dynamic_fraction * self.dynamic_indices.size)))
            kept_dyn = rng.choice(self.dynamic_indices, size=n_keep, replace=False)
            keep = np.sort(np.concatenate([self.static_indices, kept_dyn]))
            pos, col = pos[keep], col[keep]
        if floaters > 0:
            fpos = np.column_stack([rng.uniform(-0.3, 0.3, (floaters, 2)),
                                    rng.uniform(-7.0, -6.0, floaters)])
            pos = np.concatenate([pos, fpos])
            col = np.concatenate([col, rng.uniform(0.1, 0.9, (floaters, 3))])
        return pos, col

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.spec.to_json().encode())
        for arr in (self.trajectories, self.scales, self.rotations, self.opacities,
                    self.base_colors, self.images, self.gt_masks):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _motion_offsets(spec: SceneSpec, base: np.ndarray, kinds: np.ndarray,
                    phases: np.ndarray, axes: np.ndarray, frame: int) -> np.ndarray:
    """Per-frame positions for the dynamic subset (kinds: 0=trans,1=rot,2=osc)."""
    g = spec.gop_length
    tau = frame / max(g - 1, 1)
    out = base.copy()
    amp = spec.amplitude

    trans = kinds == 0
    out[trans] += tau * amp * np.array([2.0, 0.4, 0.0])

    rot = kinds == 1
    if rot.any():
        angle = tau * np.pi
        ca, sa = np.cos(angle), np.sin(angle)
        centroid = base[rot].mean(axis=0)
        rel = base[rot] - centroid
        rotated = rel.copy()
        rotated[:, 0] = ca * rel[:, 0] - sa * rel[:, 1]
        rotated[:, 1] = sa * rel[:, 0] + ca * rel[:, 1]
        out[rot] = centroid + rotated

    osc = kinds == 2
    out[osc] += (amp * np.sin(2.0 * np.pi * tau + phases[osc]))[:, None] * axes[osc]
    return out


def generate(spec: SceneSpec, cache_dir: str | Path | None = None) -> SyntheticScene:
    """Build (or load from cache) the scene, its renders, and GT masks."""
    if cache_dir is not None:
        cached = _load_cached(spec, Path(cache_dir))
        if cached is not None:
            return cached

    rng = np.random.default_rng(spec.seed)
    n_s, n_d = spec.n_static, spec.n_dynamic
    n = n_s + n_d
    if n == 0:
        raise ValueError("scene needs at least one Gaussian")

    # static floor below the dynamic cluster so dynamics are never occluded
    static_pos = np.column_stack([rng.uniform(-1.3, 1.3, (n_s, 2)), rng.uniform(-1.2, -0.5, n_s)])
    dyn_pos = np.column_stack([rng.uniform(-0.45, 0.45, (n_d, 2)), rng.uniform(-0.1, 0.5, n_d)])
    base = np.concatenate([static_pos, dyn_pos], axis=0)
    dynamic_idx = np.arange(n_s, n)
    static_idx = np.arange(n_s)

    scales = np.log(rng.uniform(0.04, 0.09, (n, 3)))
    rotations = rng.normal(0, 0.1, (n, 4)) + np.array([1.0, 0, 0, 0])
    opacities = rng.uniform(1.5, 3.0, (n, 1))
    colors = rng.uniform(0.1, 0.55, (n, 3))
    colors[dynamic_idx] = rng.uniform(0.55, 1.0, (n_d, 3))  # dynamics visibly bright

    if spec.motion == "multi":
        kinds = rng.integers(0, 3, n_d)
    elif spec.motion == "static":
        kinds = np.full(n_d, -1)
    else:
        kinds = np.full(n_d, {"translation": 0, "rotation": 1, "oscillation": 2}[spec.motion])
    phases = rng.uniform(0, 2 * np.pi, n_d)
    axes = rng.normal(size=(n_d, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)

    g = spec.gop_length
    traj = np.empty((g, n, 3))
    for f in range(g):
        traj[f] = base
        if n_d and spec.motion != "static":
            traj[f, dynamic_idx] = _motion_offsets(spec, base[dynamic_idx], kinds, phases, axes, f)

    cams = camera_ring(spec.cameras, spec.camera_radius, spec.resolution)
    scene = SyntheticScene(spec, traj, scales, rotations, opacities, colors,
                           dynamic_idx, static_idx, cams)
    res = spec.resolution
    scene.images = np.empty((g, spec.cameras, res, res, 3))
    for f in range(g):
        gs = scene.gaussians_at(f)
        for c, cam in enumerate(cams):
            scene.images[f, c] = render_image(gs, cam).rgb
    scene.gt_masks = _footprint_masks(scene)

    if cache_dir is not None:
        _store_cached(scene, Path(cache_dir))
    return scene


def _coverage(splats, width: int, height: int, qmax: float = 1.0) -> np.ndarray:
    """Pixels covered within the qmax Mahalanobis ellipse of any splat."""
    from .render import COV_FLOOR

    mean = splats.mean2d if isinstance(splats.mean2d, np.ndarray) else splats.mean2d.value
    cov = splats.cov2d_packed if isinstance(splats.cov2d_packed, np.ndarray) else splats.cov2d_packed.value
    covered = np.zeros((height, width), dtype=bool)
    for m in range(len(splats)):
        a, b, c = cov[m, 0] + COV_FLOOR, cov[m, 1], cov[m, 2] + COV_FLOOR
        det = a * c - b * b
        if det <= 1e-12:
            continue
        rx, ry = np.sqrt(qmax * a), np.sqrt(qmax * c)
        x0 = max(0, int(np.floor(mean[m, 0] - rx - 0.5)))
        x1 = min(width, int(np.floor(mean[m, 0] + rx - 0.5)) + 1)
        y0 = max(0, int(np.floor(mean[m, 1] - ry - 0.5)))
        y1 = min(height, int(np.floor(mean[m, 1] + ry - 0.5)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = (np.arange(x0, x1) + 0.5) - mean[m, 0]
        dy = (np.arange(y0, y1) + 0.5) - mean[m, 1]
        q = (c * dx[None, :] ** 2 - 2 * b * dy[:, None] * dx[None, :] + a * dy[:, None] ** 2) / det
        covered[y0:y1, x0:x1] |= q <= qmax
    return covered


def _footprint_masks(scene: SyntheticScene) -> np.ndarray:
    """GT dynamic footprint: pixels whose 1-sigma coverage changes over time."""
    from .render import project

    spec = scene.spec
    res = spec.resolution
    masks = np.zeros((spec.cameras, res, res), dtype=bool)
    if scene.dynamic_indices.size == 0 or spec.motion == "static":
        return masks
    for c, cam in enumerate(scene.cameras):
        count = np.zeros((res, res), dtype=np.int64)
        for f in range(spec.gop_length):
            gs = scene.gaussians_at(f)
            sub = GaussianSet(gs.positions[scene.dynamic_indices], gs.scales[scene.dynamic_indices],
                              gs.rotations[scene.dynamic_indices], gs.opacities[scene.dynamic_indices],
                              gs.base_colors[scene.dynamic_indices])
            count += _coverage(project(sub, cam), res, res)
        masks[c] = (count > 0) & (count < spec.gop_length)
    return masks


def _cache_path(spec: SceneSpec, cache_dir: Path) -> Path:
    key = hashlib.sha256(spec.to_json().encode()).hexdigest()[:16]
    return cache_dir / f"scene_{key}"


def _store_cached(scene: SyntheticScene, cache_dir: Path) -> None:
    path = _cache_path(scene.spec, cache_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "spec.json").write_text(scene.spec.to_json())
    np.savez_compressed(
        path / "arrays.npz",
        trajectories=scene.trajectories, scales=scene.scales, rotations=scene.rotations,
        opacities=scene.opacities, base_colors=scene.base_colors,
        dynamic_indices=scene.dynamic_indices, static_indices=scene.static_indices,
        images=scene.images, gt_masks=scene.gt_masks,
    )


def _load_cached(spec: SceneSpec, cache_dir: Path):
    path = _cache_path(spec, cache_dir)
    if not (path / "arrays.npz").exists():
        return None
    data = np.load(path / "arrays.npz")
    scene = SyntheticScene(
        spec, data["trajectories"], data["scales"], data["rotations"], data["opacities"],
        data["base_colors"], data["dynamic_indices"], data["static_indices"],
        camera_ring(spec.cameras, spec.camera_radius, spec.resolution),
    )
    scene.images = data["images"]
    scene.gt_masks = data["gt_masks"]
    return scene
