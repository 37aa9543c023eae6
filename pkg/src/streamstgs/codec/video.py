"""Feature-video codec: QP-scaled intra + closed-loop delta frames.

Frame 0 is intra-coded by uniform scalar quantization with step
``2^((QP-4)/6) / 255`` on [0, 1]-normalized data; every later frame codes
the quantized residual against the previous *reconstructed* frame, so
reconstruction error never accumulates and any decoded prefix is exact.
Coefficient planes are DEFLATE-compressed (zlib), which keeps the
bitstream bit-exact across platforms. An external-codec subprocess path
implements the same surface for experiments with real video encoders.
"""
from __future__ import annotations

import struct
import subprocess
import zlib
from dataclasses import dataclass

import numpy as np

QP_MIN, QP_MAX = 0, 51
MAGIC = b"SFV1"
CODEC_INTERNAL = 0
CODEC_EXTERNAL = 1


class DecodeError(Exception):
    """Corrupt or truncated stream; ``frame_index`` names the failing frame."""

    def __init__(self, message: str, frame_index: int | None = None, decoded=None):
        super().__init__(message)
        self.frame_index = frame_index
        self.decoded = decoded  # frames recovered before the failure


@dataclass
class FeatureVideo:
    frame_count: int
    height: int
    width: int
    qp: int
    payload: bytes
    codec: int = CODEC_INTERNAL
    codec_id: str = ""

    def to_bytes(self) -> bytes:
        cid = self.codec_id.encode()
        head = struct.pack("<4sIIIBBH", MAGIC, self.frame_count, self.height,
                           self.width, self.qp, self.codec, len(cid))
        return head + cid + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureVideo":
        if len(data) < 19 or data[:4] != MAGIC:
            raise DecodeError("bad feature-video magic")
        magic, e, h, w, qp, codec, cid_len = struct.unpack_from("<4sIIIBBH", data, 0)
        off = struct.calcsize("<4sIIIBBH")
        cid = data[off : off + cid_len].decode()
        return cls(e, h, w, qp, data[off + cid_len :], codec, cid)


def qp_step(qp: int) -> float:
    """Quantizer step on [0,1]-normalized data; doubles every 6 QP."""
    return 2.0 ** ((qp - 4) / 6.0) / 255.0


def _check_qp(qp: int) -> int:
    qp = int(qp)
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"QP {qp} outside [{QP_MIN}, {QP_MAX}]")
    return qp


def _pack_plane(codes: np.ndarray) -> bytes:
    if np.max(np.abs(codes), initial=0) < 2**15:
        dtype, flag = "<i2", 0
    else:
        dtype, flag = "<i4", 1
    comp = zlib.compress(codes.astype(dtype).tobytes(), 6)
    return struct.pack("<BI", flag, len(comp)) + comp


def _unpack_plane(data: bytes, off: int, shape, frame_index: int):
    try:
        flag, length = struct.unpack_from("<BI", data, off)
    except struct.error as exc:
        raise DecodeError(f"truncated header at frame {frame_index}", frame_index) from exc
    off += 5
    blob = data[off : off + length]
    if len(blob) < length:
        raise DecodeError(f"truncated payload at frame {frame_index}", frame_index)
    try:
        raw = zlib.decompress(blob)
    except zlib.error as exc:
        raise DecodeError(f"corrupt plane at frame {frame_index}", frame_index) from exc
    dtype = "<i2" if flag == 0 else "<i4"
    codes = np.frombuffer(raw, dtype=dtype)
    if codes.size != shape[0] * shape[1]:
        raise DecodeError(f"wrong plane size at frame {frame_index}", frame_index)
    return codes.reshape(shape).astype(np.float64), off + length


def encode_feature_video(frames: np.ndarray, qp: int) -> FeatureVideo:
    """Encode (E, H, W) normalized frames; reconstruction error <= step/2."""
    qp = _check_qp(qp)
    frames = np.asarray(frames, dtype=np.float64)
    e, h, w = frames.shape
    step = qp_step(qp)
    chunks = []
    recon = None
    for k in range(e):
        target = frames[k] if recon is None else frames[k] - recon
        codes = np.rint(target / step)
        chunks.append(_pack_plane(codes))
        recon = codes * step if recon is None else recon + codes * step
    return FeatureVideo(e, h, w, qp, b"".join(chunks))


def decode_feature_video(fv: FeatureVideo) -> np.ndarray:
    """Exact reproduction of the encoder's closed-loop reference frames."""
    if fv.codec == CODEC_EXTERNAL:
        raise DecodeError("external-codec payload: decode with ExternalCodec.decode")
    step = qp_step(fv.qp)
    frames = np.empty((fv.frame_count, fv.height, fv.width))
    off = 0
    recon = None
    for k in range(fv.frame_count):
        try:
            codes, off = _unpack_plane(fv.payload, off, (fv.height, fv.width), k)
        except DecodeError as exc:
            exc.decoded = frames[:k].copy()
            raise
        recon = codes * step if recon is None else recon + codes * step
        frames[k] = recon
    return frames


@dataclass
class ExternalCodec:
    """Subprocess contract for pluggable encoders.

    Encoder: ``cmd --width W --height H --frames E --qp Q`` with raw 8-bit
    grayscale frames on stdin and the bitstream on stdout. Decoder is the
    inverse (bitstream in, raw frames out). Frames are affinely mapped to
    [0, 255]; the caller stores the feature normalization in the segment
    header, and this 8-bit mapping is fixed at 1/255.
    """

    encode_cmd: list
    decode_cmd: list
    codec_id: str = "external"

    def _run(self, cmd: list, payload: bytes) -> bytes:
        proc = subprocess.run(cmd, input=payload, stdout=subprocess.PIPE, check=True)
        return proc.stdout

    def encode(self, frames: np.ndarray, qp: int) -> FeatureVideo:
        qp = _check_qp(qp)
        frames = np.asarray(frames, dtype=np.float64)
        e, h, w = frames.shape
        raw = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8).tobytes()
        cmd = [str(c) for c in self.encode_cmd] + [
            "--width", str(w), "--height", str(h), "--frames", str(e), "--qp", str(qp)]
        payload = self._run(cmd, raw)
        return FeatureVideo(e, h, w, qp, payload, CODEC_EXTERNAL, self.codec_id)

    def decode(self, fv: FeatureVideo) -> np.ndarray:
        cmd = [str(c) for c in self.decode_cmd] + [
            "--width", str(fv.width), "--height", str(fv.height),
            "--frames", str(fv.frame_count), "--qp", str(fv.qp)]
        raw = self._run(cmd, fv.payload)
        want = fv.frame_count * fv.height * fv.width
        if len(raw) != want:
            raise DecodeError(f"external decoder returned {len(raw)} bytes, expected {want}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(fv.frame_count, fv.height, fv.width)
        return arr.astype(np.float64) / 255.0
