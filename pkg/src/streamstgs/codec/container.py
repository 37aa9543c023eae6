"""GopSegment container: the on-disk / on-wire unit of one GOP.

Byte layout (all little-endian):

    magic   5 bytes  b"STGS1"
    version u8       1
    hlen    u32      length of the canonical JSON header
    header  hlen     JSON: G, W, feature_dim, N, side, pad_count, qp,
                     per-attribute quant table {lo, hi, levels}, feature
                     normalization {lo, hi}, section names
    nsec    u32      section count
    per section:     u32 byte length + payload
    crc     u32      CRC-32 over the concatenated section payloads

Sections, in order: the five attribute planes (DEFLATE-compressed; float32
normalized planes for lossless attributes, integer code planes otherwise),
the grid permutation, the feature video, and the deformation-field weights.
See docs/gop_segment_format.md for the full byte-level description.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..core import DeformationField, GaussianSet, TemporalFeatureBank
from .quantize import QuantEntry, default_quant_spec, dequantize_attribute, observed_entry, quantize_attribute
from .sorting import (
    ATTRIBUTE_FIELDS,
    GridLayout,
    build_attribute_grids,
    features_to_grids,
    grid_to_attributes,
    grids_to_features,
    sort_to_grid,
    tile_feature_grid,
    untile_feature_grid,
)
from .video import DecodeError, FeatureVideo, decode_feature_video, encode_feature_video

MAGIC = b"STGS1"
VERSION = 1
MAX_GAUSSIANS_DEFAULT = 150_000
SECTIONS = (*ATTRIBUTE_FIELDS, "permutation", "feature_video", "mlp_weights")


@dataclass
class GopModel:
    """In-memory model of one GOP plus the grid layout it was coded with."""

    gaussians: GaussianSet
    bank: TemporalFeatureBank
    field: DeformationField
    layout: GridLayout | None = None

    def validate(self) -> None:
        n = self.gaussians.count
        if self.bank is not None and self.bank.gaussian_count != n:
            raise ValueError(f"feature bank covers {self.bank.gaussian_count} Gaussians, set has {n}")


def _plane_dtype(entry: QuantEntry) -> str:
    if entry.levels is None:
        return "<f4"
    return "<u1" if entry.levels <= 256 else "<u2"


def encode_gop(model: GopModel, qp: int, max_gaussians: int = MAX_GAUSSIANS_DEFAULT,
               seed: int = 0) -> bytes:
    """Sort, quantize, and frame one GOP into segment bytes."""
    model.validate()
    n = model.gaussians.count
    if n > max_gaussians:
        raise ValueError(f"{n} Gaussians exceed the configured maximum {max_gaussians}")
    layout = model.layout or sort_to_grid(model.gaussians, seed=seed)
    spec = default_quant_spec(model.gaussians)

    grids = build_attribute_grids(model.gaussians, layout)
    sections = {}
    quant_meta = {}
    for name in ATTRIBUTE_FIELDS:
        entry = spec[name]
        stored = quantize_attribute(ad.val(grids[name]), entry)
        sections[name] = zlib.compress(np.ascontiguousarray(stored).tobytes(), 6)
        quant_meta[name] = {"lo": entry.lo, "hi": entry.hi, "levels": entry.levels}

    sections["permutation"] = zlib.compress(layout.permutation.astype("<u4").tobytes(), 6)

    feats = ad.val(model.bank.features)
    feat_entry = observed_entry(feats, None)
    fgrids = ad.val(features_to_grids(model.bank, layout))  # (E, s, s, F)
    norm = (fgrids - feat_entry.lo) / (feat_entry.hi - feat_entry.lo)
    tiled = np.stack([tile_feature_grid(f) for f in norm])
    fv = encode_feature_video(tiled, qp)
    sections["feature_video"] = fv.to_bytes()
    sections["mlp_weights"] = model.field.to_bytes()

    header = {
        "gop_length": model.bank.gop_length,
        "window": model.bank.window,
        "feature_dim": model.bank.feature_dim,
        "count": n,
        "side": layout.side,
        "pad_count": layout.pad_count,
        "qp": int(qp),
        "quant": quant_meta,
        "feature_norm": {"lo": feat_entry.lo, "hi": feat_entry.hi},
        "sections": list(SECTIONS),
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    body = b"".join(struct.pack("<I", len(sections[s])) + sections[s] for s in SECTIONS)
    crc = zlib.crc32(b"".join(sections[s] for s in SECTIONS))
    return (MAGIC + struct.pack("<B", VERSION) + struct.pack("<I", len(hjson)) + hjson
            + struct.pack("<I", len(SECTIONS)) + body + struct.pack("<I", crc))


@dataclass
class ParsedSegment:
    header: dict
    sections: dict


def parse_segment(data: bytes) -> ParsedSegment:
    """Validate framing, magic, version, and checksum; split sections."""
    if len(data) < 14:
        raise DecodeError("segment shorter than its fixed header")
    if data[:5] != MAGIC:
        raise DecodeError(f"bad magic {data[:5]!r}")
    version = data[5]
    if version != VERSION:
        raise DecodeError(f"unsupported segment version {version}")
    (hlen,) = struct.unpack_from("<I", data, 6)
    off = 10
    try:
        header = json.loads(data[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError("corrupt segment header") from exc
    off += hlen
    (nsec,) = struct.unpack_from("<I", data, off)
    off += 4
    names = header.get("sections", list(SECTIONS))
    if nsec != len(names):
        raise DecodeError(f"section count {nsec} != header's {len(names)}")
    sections = {}
    for name in names:
        if off + 4 > len(data):
            raise DecodeError(f"truncated before section {name!r}")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        blob = data[off : off + length]
        if len(blob) < length:
            raise DecodeError(f"truncated inside section {name!r}")
        sections[name] = blob
        off += length
    if off + 4 > len(data):
        raise DecodeError("missing checksum")
    (crc,) = struct.unpack_from("<I", data, off)
    if crc != zlib.crc32(b"".join(sections[n] for n in names)):
        raise DecodeError("checksum mismatch")
    return ParsedSegment(header, sections)


def _decode_layout(seg: ParsedSegment) -> GridLayout:
    h = seg.header
    perm = np.frombuffer(zlib.decompress(seg.sections["permutation"]), dtype="<u4").astype(np.int64)
    return GridLayout(side=h["side"], permutation=perm, pad_count=h["pad_count"])


def decode_keyframe(seg: ParsedSegment) -> GopModel:
    """Attribute planes + MLP weights; the feature bank stays undecoded."""
    h = seg.header
    layout = _decode_layout(seg)
    side, n = h["side"], h["count"]
    attrs = {}
    for name in ATTRIBUTE_FIELDS:
        meta = h["quant"][name]
        entry = QuantEntry(meta["lo"], meta["hi"], meta["levels"])
        raw = zlib.decompress(seg.sections[name])
        channels = {"positions": 3, "scales": 3, "rotations": 4, "opacities": 1, "base_colors": 3}[name]
        plane = np.frombuffer(raw, dtype=_plane_dtype(entry)).reshape(side, side, channels)
        attrs[name] = grid_to_attributes(dequantize_attribute(plane, entry), layout)[:n]
    field = DeformationField.from_bytes(seg.sections["mlp_weights"])
    gaussians = GaussianSet(**attrs)
    return GopModel(gaussians, None, field, layout)


def decode_features(seg: ParsedSegment) -> TemporalFeatureBank:
    """Decode the feature video and undo tiling/normalization/permutation."""
    h = seg.header
    layout = _decode_layout(seg)
    fv = FeatureVideo.from_bytes(seg.sections["feature_video"])
    tiled = decode_feature_video(fv)
    grids = np.stack([untile_feature_grid(f) for f in tiled])
    norm = h["feature_norm"]
    grids = norm["lo"] + grids * (norm["hi"] - norm["lo"])
    feats = grids_to_features(grids, layout)
    return TemporalFeatureBank(h["gop_length"], h["window"], feats, h["feature_dim"])


def decode_gop(data: bytes) -> GopModel:
    """Full inverse of encode_gop (attributes exact to their stored planes)."""
    seg = parse_segment(data)
    model = decode_keyframe(seg)
    model.bank = decode_features(seg)
    return model
