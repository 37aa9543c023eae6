"""Canonical Gaussians, temporal features, and the deformation pipeline.

A GOP is represented by a canonical :class:`GaussianSet`, a
:class:`TemporalFeatureBank` of E = G + W - 1 per-slot feature vectors, and a
:class:`DeformationField` of bias-free MLPs. ``window_features`` ->
``temporal_forward`` -> ``decode_deformation`` -> ``deform`` reconstructs the
Gaussians of one frame. Every function here accepts plain ndarrays or
autodiff ``Var`` nodes and is pure; the trainer owns all mutation.

Window convention: feature slot j serves frames j-W+1 .. j, so frame i reads
slots i .. i+W-1 (a centered window of width W shifted by (W-1)/2, the unique
indexing that yields exactly G + W - 1 slots).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

FEATURE_DIM_DEFAULT = 16
TIME_ENCODING_BANDS = 6  # resolves 2^6 = 64 > 60 frames per GOP
HIDDEN_DIM = 64


def positional_encode(t: float, bands: int) -> np.ndarray:
    """Interleaved (sin(2^l pi t), cos(2^l pi t)) for l = 0..bands-1."""
    if bands < 1:
        raise ValueError(f"bands must be >= 1, got {bands}")
    t = float(t)
    if not np.isfinite(t):
        raise ValueError(f"non-finite timestamp {t!r}")
    freqs = (2.0 ** np.arange(bands)) * np.pi * t
    out = np.empty(2 * bands)
    out[0::2] = np.sin(freqs)
    out[1::2] = np.cos(freqs)
    return out


def positional_encode_array(x, bands: int):
    """Row-wise encoding of an (..., D) array -> (..., 2*bands*D).

    Differentiable: gradients flow through sin/cos when ``x`` is a Var
    (the transformer's gamma(X) is a real gradient path to positions).
    """
    shape = ad.val(x).shape
    freqs = (2.0 ** np.arange(bands)) * np.pi  # (bands,)
    ang = ad.reshape(x, shape + (1,)) * freqs  # (..., D, bands)
    enc = ad.stack([ad.sin(ang), ad.cos(ang)], axis=-1)  # (..., D, bands, 2)
    return ad.reshape(enc, shape[:-1] + (2 * bands * shape[-1],))


@dataclass
class GaussianSet:
    """Per-GOP canonical Gaussian attributes (activations applied at use).

    ``scales`` are log-scales (exp at render), ``opacities`` are logits
    (sigmoid at render), ``rotations`` are raw quaternions (normalized at
    render), ``base_colors`` pre-activation (relu at use).
    """

    positions: object  # (N, 3)
    scales: object  # (N, 3)
    rotations: object  # (N, 4) quaternion (w, x, y, z)
    opacities: object  # (N, 1)
    base_colors: object  # (N, 3)

    def __post_init__(self):
        n = ad.val(self.positions).shape[0]
        for name in ("scales", "rotations", "opacities", "base_colors"):
            if ad.val(getattr(self, name)).shape[0] != n:
                raise ValueError(f"{name} leading dim != {n}")

    @property
    def count(self) -> int:
        return ad.val(self.positions).shape[0]

    def validate(self) -> None:
        for name in ("positions", "scales", "rotations", "opacities", "base_colors"):
            if not np.all(np.isfinite(ad.val(getattr(self, name)))):
                raise ValueError(f"non-finite values in {name}")
        act = np.exp(ad.val(self.scales))
        if not (np.all(act > 0) and np.all(np.isfinite(act))):
            raise ValueError("activated scales must be strictly positive and finite")
        q = ad.val(self.rotations)
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < 1e-8):
            raise ValueError("degenerate quaternion (norm < 1e-8)")
        assert np.all(np.abs(np.linalg.norm(q / norms[:, None], axis=1) - 1.0) < 1e-6)

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            *(np.array(ad.val(getattr(self, f))) for f in ("positions", "scales", "rotations", "opacities", "base_colors"))
        )


@dataclass
class TemporalFeatureBank:
    """E = G + W - 1 feature vectors per Gaussian, one per temporal slot."""

    gop_length: int
    window: int
    features: object  # (E, N, feature_dim)
    feature_dim: int = FEATURE_DIM_DEFAULT

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        e, _, f = ad.val(self.features).shape
        if e != self.gop_length + self.window - 1:
            raise ValueError(f"expected E = G + W - 1 = {self.gop_length + self.window - 1} slots, got {e}")
        if f != self.feature_dim:
            raise ValueError(f"feature dim {f} != declared {self.feature_dim}")

    @property
    def slot_count(self) -> int:
        return ad.val(self.features).shape[0]

    @property
    def gaussian_count(self) -> int:
        return ad.val(self.features).shape[1]

    @classmethod
    def zeros(cls, gop_length: int, window: int, count: int, feature_dim: int = FEATURE_DIM_DEFAULT):
        e = gop_length + window - 1
        return cls(gop_length, window, np.zeros((e, count, feature_dim)), feature_dim)


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)


@dataclass
class DeformationField:
    """Bias-free temporal MLP plus the four attribute decoders.

    ``temporal``: one (W*feature_dim + 2*time_bands, 64) layer, tanh output.
    Each decoder is two bias-free linear layers with a tanh hidden layer;
    ``d_o`` additionally applies tanh to its output. Weights may be ndarrays
    (inference) or autodiff Vars (training).
    """

    window: int
    feature_dim: int = FEATURE_DIM_DEFAULT
    time_bands: int = TIME_ENCODING_BANDS
    params: dict = field(default_factory=dict)

    LAYER_ORDER = ("d_t", "d_v.0", "d_v.1", "d_cov.0", "d_cov.1", "d_o.0", "d_o.1", "d_c.0", "d_c.1")

    def __post_init__(self):
        if not self.params:
            raise ValueError("params required; use DeformationField.create or from_bytes")
        din = self.window * self.feature_dim + 2 * self.time_bands
        shapes = self.layer_shapes(din)
        for name in self.LAYER_ORDER:
            got = ad.val(self.params[name]).shape
            if got != shapes[name]:
                raise ValueError(f"layer {name}: shape {got} != expected {shapes[name]}")
            if not np.all(np.isfinite(ad.val(self.params[name]))):
                raise ValueError(f"layer {name}: non-finite weights")

    @staticmethod
    def layer_shapes(temporal_in: int) -> dict:
        h = HIDDEN_DIM
        return {
            "d_t": (temporal_in, h),
            "d_v.0": (h, h),
            "d_v.1": (h, 3),
            "d_cov.0": (h, h),
            "d_cov.1": (h, 7),
            "d_o.0": (h + 3, h),
            "d_o.1": (h, 1),
            "d_c.0": (h + 3, h),
            "d_c.1": (h, 3),
        }

    HEAD_LAYERS = ("d_v.1", "d_cov.1", "d_o.1", "d_c.1")

    @classmethod
    def create(cls, window: int, feature_dim: int = FEATURE_DIM_DEFAULT,
               time_bands: int = TIME_ENCODING_BANDS, rng: np.random.Generator | None = None,
               head_scale: float = 1e-3):
        """He-init inner layers; decoder output heads start near zero.

        Near-zero heads make the initial deformation tiny (a static start)
        while the temporal MLP keeps full-strength gradients flowing into
        the features.
        """
        rng = rng or np.random.default_rng(0)
        din = window * feature_dim + 2 * time_bands
        shapes = cls.layer_shapes(din)
        params = {}
        for name in cls.LAYER_ORDER:
            w = _he_init(rng, *shapes[name])
            if name in cls.HEAD_LAYERS:
                w = w * head_scale
            params[name] = w
        return cls(window, feature_dim, time_bands, params)

    def to_bytes(self) -> bytes:
        """Little-endian f32 weights, layer-major, preceded by a shape table."""
        out = [struct.pack("<I", len(self.LAYER_ORDER))]
        for name in self.LAYER_ORDER:
            w = ad.val(self.params[name])
            out.append(struct.pack("<II", *w.shape))
        out.append(struct.pack("<III", self.window, self.feature_dim, self.time_bands))
        for name in self.LAYER_ORDER:
            out.append(np.ascontiguousarray(ad.val(self.params[name]), dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DeformationField":
        (n_layers,) = struct.unpack_from("<I", blob, 0)
        if n_layers != len(cls.LAYER_ORDER):
            raise ValueError(f"expected {len(cls.LAYER_ORDER)} layers, header says {n_layers}")
        off = 4
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", blob, off))
            off += 8
        window, feature_dim, time_bands = struct.unpack_from("<III", blob, off)
        off += 12
        params = {}
        for name, shape in zip(cls.LAYER_ORDER, shapes):
            n = shape[0] * shape[1]
            w = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
            params[name] = w.astype(np.float64)
            off += 4 * n
        return cls(window, feature_dim, time_bands, params)


@dataclass
class CameraModel:
    """Pinhole camera: intrinsics K and a rigid world-to-camera transform."""

    intrinsics: np.ndarray  # (3, 3)
    world_to_camera: np.ndarray  # (4, 4)
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        if not (k[0, 0] > 0 and k[1, 1] > 0):
            raise ValueError("focal entries must be positive")
        if np.any(np.abs(k[np.tril_indices(3, -1)]) > 1e-12):
            raise ValueError("K must be upper-triangular")
        self.intrinsics = k
        w = np.asarray(self.world_to_camera, dtype=np.float64)
        r = w[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation block of world_to_camera is not orthonormal")
        self.world_to_camera = w

    @property
    def view_dir(self) -> np.ndarray:
        """Camera forward axis (+z of camera space) expressed in world frame."""
        return self.world_to_camera[:3, :3].T @ np.array([0.0, 0.0, 1.0])

    @property
    def camera_center(self) -> np.ndarray:
        r, t = self.world_to_camera[:3, :3], self.world_to_camera[:3, 3]
        return -r.T @ t


@dataclass
class FrameDeformation:
    """Per-frame attribute offsets plus the temporal feature that produced them."""

    dx: object  # (N, 3)
    dscale: object  # (N, 3)
    dquat: object  # (N, 4)
    dopacity: object  # (N, 1), tanh output in (-1, 1)
    dcolor: object  # (N, 3)
    temporal_feature: object  # (N, 64), retained for self-distillation

    @classmethod
    def zeros(cls, n: int):
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                   np.zeros((n, 1)), np.zeros((n, 3)), np.zeros((n, HIDDEN_DIM)))


def window_features(bank: TemporalFeatureBank, frame_index: int):
    """Concatenate the W feature slots of one frame -> (N, W*feature_dim)."""
    g, w = bank.gop_length, bank.window
    if not 0 <= frame_index < g:
        raise IndexError(f"frame index {frame_index} outside [0, {g})")
    block = ad.getitem(bank.features, slice(frame_index, frame_index + w))  # (W, N, F)
    block = ad.swapaxes(block, 0, 1)  # (N, W, F)
    n = bank.gaussian_count
    return ad.reshape(block, (n, w * bank.feature_dim))


def window_features_all(bank: TemporalFeatureBank):
    """All frames' windows in one gather -> (G, N, W*feature_dim)."""
    g, w = bank.gop_length, bank.window
    n = bank.gaussian_count
    idx = (np.arange(g)[:, None] + np.arange(w)[None, :]).reshape(-1)
    block = ad.take0(bank.features, idx)  # (G*W, N, F)
    block = ad.reshape(block, (g, w, n, bank.feature_dim))
    block = ad.swapaxes(block, 1, 2)  # (G, N, W, F)
    return ad.reshape(block, (g, n, w * bank.feature_dim))


def frame_timestamp(frame_index: int, gop_length: int) -> float:
    """Timestamp normalized by the GOP length into [0, 1]."""
    if gop_length <= 1:
        return 0.0
    return frame_index / (gop_length - 1)


def temporal_forward(field: DeformationField, windowed, t: float):
    """tanh(D_t([fe_i, gamma(t)])) -> per-Gaussian temporal feature (N, 64)."""
    if not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"timestamp {t} outside [0, 1]; normalize by GOP length")
    wv = ad.val(windowed)
    din = field.window * field.feature_dim
    if wv.ndim != 2 or wv.shape[1] != din:
        raise ValueError(f"windowed features {wv.shape} incompatible with D_t input {din}")
    enc = np.broadcast_to(positional_encode(t, field.time_bands), (wv.shape[0], 2 * field.time_bands))
    x = ad.concatenate([windowed, enc], axis=1)
    return ad.tanh(x @ field.params["d_t"])


def temporal_forward_sequence(field: DeformationField, windowed_all, timestamps):
    """Batched temporal MLP over every frame -> (G, N, 64)."""
    g, n, din = ad.val(windowed_all).shape
    if din != field.window * field.feature_dim:
        raise ValueError(f"windowed features dim {din} incompatible with D_t")
    enc = np.stack([positional_encode(float(t), field.time_bands) for t in timestamps])
    enc = np.broadcast_to(enc[:, None, :], (g, n, 2 * field.time_bands))
    x = ad.concatenate([windowed_all, enc], axis=2)
    return ad.tanh(x @ field.params["d_t"])


def _decoder(field: DeformationField, name: str, x):
    h = ad.tanh(x @ field.params[f"{name}.0"])
    return h @ field.params[f"{name}.1"]


def decode_deformation(field: DeformationField, temporal_feature, view_dir) -> FrameDeformation:
    """Run the four decoders; D_o/D_c additionally see the view direction."""
    view = np.asarray(ad.detach(view_dir), dtype=np.float64)
    norm = np.linalg.norm(view)
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"view_dir norm {norm:.6f} not within 1e-3 of unit")
    view = view / norm
    n = ad.val(temporal_feature).shape[0]
    viewed = ad.concatenate([temporal_feature, np.broadcast_to(view, (n, 3))], axis=1)

    dx = _decoder(field, "d_v", temporal_feature)
    cov = _decoder(field, "d_cov", temporal_feature)
    dscale = ad.getitem(cov, (slice(None), slice(0, 3)))
    dquat = ad.getitem(cov, (slice(None), slice(3, 7)))
    dopacity = ad.tanh(_decoder(field, "d_o", viewed))
    dcolor = _decoder(field, "d_c", viewed)
    return FrameDeformation(dx, dscale, dquat, dopacity, dcolor, temporal_feature)


def deform(canonical: GaussianSet, d: FrameDeformation) -> GaussianSet:
    """Apply attribute offsets; canonical color is relu'd before the offset."""
    if ad.val(d.dx).shape[0] != canonical.count:
        raise ValueError(f"deformation covers {ad.val(d.dx).shape[0]} Gaussians, set has {canonical.count}")
    return GaussianSet(
        positions=canonical.positions + d.dx,
        scales=canonical.scales + d.dscale,
        rotations=canonical.rotations + d.dquat,
        opacities=canonical.opacities + d.dopacity,
        base_colors=ad.relu(canonical.base_colors) + d.dcolor,
    )


def deform_frame(canonical: GaussianSet, bank: TemporalFeatureBank, field: DeformationField,
                 frame_index: int, view_dir) -> GaussianSet:
    """Full pipeline for one frame: window -> temporal MLP -> decode -> deform."""
    fe = window_features(bank, frame_index)
    f = temporal_forward(field, fe, frame_timestamp(frame_index, bank.gop_length))
    return deform(canonical, decode_deformation(field, f, view_dir))


def normalized_quaternions(q):
    """Unit quaternions; rejects near-zero norms as invalid model state."""
    norms = ad.sqrt(ad.sum(ad.square(q), axis=1, keepdims=True))
    if np.any(ad.val(norms) < 1e-8):
        raise ValueError("degenerate quaternion (norm < 1e-8)")
    return q / norms


def quaternions_to_rotations(q):
    """(N, 4) quaternions (w, x, y, z), already normalized -> (N, 3, 3)."""
    w = ad.getitem(q, (slice(None), 0))
    x = ad.getitem(q, (slice(None), 1))
    y = ad.getitem(q, (slice(None), 2))
    z = ad.getitem(q, (slice(None), 3))
    two = 2.0
    entries = [
        1.0 - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y),
        two * (x * y + w * z), 1.0 - two * (x * x + z * z), two * (y * z - w * x),
        two * (x * z - w * y), two * (y * z + w * x), 1.0 - two * (x * x + y * y),
    ]
    n = ad.val(q).shape[0]
    return ad.reshape(ad.stack(entries, axis=1), (n, 3, 3))


def covariance_matrices(scales, rotations):
    """Sigma = R diag(exp(s))^2 R^T via the Cholesky-like factor L = R diag(exp(s))."""
    s = ad.exp(scales)  # (N, 3)
    r = quaternions_to_rotations(normalized_quaternions(rotations))  # (N, 3, 3)
    l = r * ad.reshape(s, (ad.val(s).shape[0], 1, 3))
    return l @ ad.swapaxes(l, 1, 2)
