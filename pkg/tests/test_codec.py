import subprocess
import sys
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamstgs.codec import (
    DecodeError,
    ExternalCodec,
    FeatureVideo,
    GopModel,
    GridLayout,
    QuantEntry,
    attribute_matrix,
    decode_feature_video,
    decode_features,
    decode_gop,
    decode_keyframe,
    dequantize_attribute,
    encode_feature_video,
    encode_gop,
    neighbor_dissimilarity,
    parse_segment,
    qp_step,
    quantize_attribute,
    sort_to_grid,
    tile_feature_grid,
    untile_feature_grid,
)
from streamstgs.core import DeformationField, GaussianSet, TemporalFeatureBank


def make_set(n, seed=0, line=False):
    rng = np.random.default_rng(seed)
    if line:
        # shuffled points along a 3D line with attributes smooth in the line parameter
        t = rng.permutation(n) / max(n - 1, 1)
        return GaussianSet(
            positions=np.outer(t, [1.0, 0.5, -0.25]) + [0.0, 1.0, 2.0],
            scales=np.outer(np.sin(2 * np.pi * t), [0.3, 0.2, 0.1]) - 2.0,
            rotations=np.outer(t, [0.5, 0.2, -0.3, 0.1]) + [1.0, 0, 0, 0],
            opacities=t[:, None] * 2.0 - 1.0,
            base_colors=np.outer(np.cos(np.pi * t), [0.5, 0.3, 0.2]) + 1.0,
        )
    return GaussianSet(
        positions=rng.uniform(-1, 1, (n, 3)),
        scales=rng.uniform(-3.0, -1.0, (n, 3)),
        rotations=rng.uniform(-0.9, 1.9, (n, 4)),
        opacities=rng.uniform(-3.5, 3.5, (n, 1)),
        base_colors=rng.uniform(0.0, 3.5, (n, 3)),
    )


def make_model(n=40, g=6, w=3, seed=0):
    rng = np.random.default_rng(seed)
    gaussians = make_set(n, seed)
    e = g + w - 1
    base = rng.standard_normal((1, n, 16)) * 0.3
    drift = np.linspace(0, 1, e)[:, None, None] * rng.standard_normal((1, n, 16)) * 0.05
    bank = TemporalFeatureBank(g, w, base + drift)
    field = DeformationField.create(w, rng=rng)
    return GopModel(gaussians, bank, field)


class TestSortToGrid:
    def test_single_gaussian(self):
        layout = sort_to_grid(make_set(1))
        assert layout.side == 1 and layout.pad_count == 0
        np.testing.assert_array_equal(layout.permutation, [0])

    def test_identical_gaussians_identity(self):
        g = GaussianSet(np.zeros((4, 3)), np.zeros((4, 3)), np.tile([1.0, 0, 0, 0], (4, 1)),
                        np.zeros((4, 1)), np.ones((4, 3)))
        layout = sort_to_grid(g)
        np.testing.assert_array_equal(layout.permutation, np.arange(4))

    def test_line_scene_halves_dissimilarity(self):
        g = make_set(256, seed=3, line=True)
        vectors = attribute_matrix(g)
        layout = sort_to_grid(g, seed=0)
        shuffled = GridLayout(16, np.random.default_rng(0).permutation(256), 0)
        assert neighbor_dissimilarity(layout, vectors) <= 0.5 * neighbor_dissimilarity(shuffled, vectors)

    def test_never_worse_than_morton_seed(self):
        g = make_set(100, seed=5)
        vectors = attribute_matrix(g)
        seed_only = sort_to_grid(g, proposals_per_sweep=0)
        refined = sort_to_grid(g, seed=1)
        assert neighbor_dissimilarity(refined, vectors) <= neighbor_dissimilarity(seed_only, vectors) + 1e-12

    def test_deterministic(self):
        g = make_set(60, seed=7)
        a = sort_to_grid(g, seed=42)
        b = sort_to_grid(g, seed=42)
        np.testing.assert_array_equal(a.permutation, b.permutation)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=1, max_value=300))
    def test_bijectivity_property(self, n):
        layout = sort_to_grid(make_set(n, seed=n), proposals_per_sweep=min(4 * n, 100))
        inv = np.empty(n, dtype=int)
        inv[layout.permutation] = np.arange(n)
        np.testing.assert_array_equal(layout.permutation[inv], np.arange(n))
        assert layout.side**2 >= n

    def test_bijectivity_large(self):
        layout = sort_to_grid(make_set(10_000, seed=1), proposals_per_sweep=2000)
        assert np.array_equal(np.sort(layout.permutation), np.arange(10_000))


class TestFeatureTiling:
    def test_roundtrip(self):
        grid = np.random.default_rng(0).standard_normal((5, 7, 16))
        np.testing.assert_array_equal(untile_feature_grid(tile_feature_grid(grid)), grid)

    def test_channel_to_tile_mapping(self):
        grid = np.zeros((3, 3, 16))
        grid[:, :, 6] = 1.0  # channel 6 -> tile row 1, col 2
        img = tile_feature_grid(grid)
        assert img[3:6, 6:9].all() and img.sum() == 9

    def test_output_shape(self):
        img = tile_feature_grid(np.zeros((4, 4, 16)))
        assert img.shape == (16, 16)


class TestQuantize:
    def test_rotation_clip_example(self):
        entry = QuantEntry(-1.0, 2.0, 2**7)
        stored = quantize_attribute(np.array([-1.5]), entry)
        np.testing.assert_allclose(dequantize_attribute(stored, entry), [-1.0])

    def test_endpoint_preserved(self):
        entry = QuantEntry(-4.0, 4.0, 2**6)
        stored = quantize_attribute(np.array([4.0]), entry)
        assert stored[0] == 63
        np.testing.assert_allclose(dequantize_attribute(stored, entry), [4.0])

    def test_midrange_error_bound(self):
        entry = QuantEntry(-1.0, 2.0, 2**7)
        v = np.array([-1.0 + 0.5 * 3.0])
        err = abs(dequantize_attribute(quantize_attribute(v, entry), entry) - v)
        assert err <= 3.0 / 254 + 1e-12

    def test_bulk_error_bounds(self):
        rng = np.random.default_rng(0)
        for entry in (QuantEntry(-1.0, 2.0, 2**7), QuantEntry(-4.0, 4.0, 2**6)):
            v = rng.uniform(entry.lo, entry.hi, 200_000)
            err = np.abs(dequantize_attribute(quantize_attribute(v, entry), entry) - v)
            assert np.max(err) <= entry.max_error + 1e-12

    def test_lossless_entry_is_float32(self):
        entry = QuantEntry(0.0, 4.0, None)
        stored = quantize_attribute(np.array([1.234567]), entry)
        assert stored.dtype == np.float32

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError):
            QuantEntry(2.0, 2.0, 64)


class TestFeatureVideo:
    def test_constant_zero_any_qp(self):
        frames = np.zeros((5, 8, 8))
        for qp in (0, 16, 32, 51):
            fv = encode_feature_video(frames, qp)
            np.testing.assert_array_equal(decode_feature_video(fv), frames)
        nz = encode_feature_video(np.random.default_rng(0).uniform(size=(5, 8, 8)), 16)
        assert len(encode_feature_video(frames, 16).payload) < len(nz.payload)

    def test_qp_monotonicity(self):
        rng = np.random.default_rng(1)
        frames = np.cumsum(rng.standard_normal((8, 16, 16)) * 0.05, axis=0) * 0.2 + 0.5
        frames = np.clip(frames, 0, 1)
        lo = encode_feature_video(frames, 16)
        hi = encode_feature_video(frames, 32)
        assert len(lo.payload) >= len(hi.payload)
        err_lo = np.max(np.abs(decode_feature_video(lo) - frames))
        err_hi = np.max(np.abs(decode_feature_video(hi) - frames))
        assert err_lo <= err_hi

    def test_error_bound_per_frame(self):
        rng = np.random.default_rng(2)
        frames = rng.uniform(size=(6, 12, 12))
        for qp in (0, 20, 33):
            fv = encode_feature_video(frames, qp)
            out = decode_feature_video(fv)
            assert np.max(np.abs(out - frames)) <= qp_step(qp) / 2 + 1e-12

    def test_identical_frames_minimal_residual(self):
        frame = np.random.default_rng(3).uniform(size=(10, 10))
        fv = encode_feature_video(np.stack([frame, frame]), 20)
        # second chunk is exactly a packed all-zero plane
        zero_plane = zlib.compress(np.zeros(100, "<i2").tobytes(), 6)
        assert fv.payload.endswith(zero_plane)

    def test_roundtrip_deterministic(self):
        frames = np.random.default_rng(4).uniform(size=(4, 9, 9))
        fv = encode_feature_video(frames, 24)
        a = decode_feature_video(fv)
        b = decode_feature_video(FeatureVideo.from_bytes(fv.to_bytes()))
        np.testing.assert_array_equal(a, b)

    def test_truncation_recovers_prefix(self):
        frames = np.random.default_rng(5).uniform(size=(6, 8, 8))
        fv = encode_feature_video(frames, 12)
        # cut inside the 4th frame's payload
        import struct as _s

        off, cuts = 0, []
        for _ in range(6):
            flag, length = _s.unpack_from("<BI", fv.payload, off)
            cuts.append(off)
            off += 5 + length
        truncated = FeatureVideo(6, 8, 8, 12, fv.payload[: cuts[3] + 7])
        with pytest.raises(DecodeError) as exc:
            decode_feature_video(truncated)
        assert exc.value.frame_index == 3
        np.testing.assert_allclose(exc.value.decoded, decode_feature_video(fv)[:3])

    def test_qp_zero_near_lossless(self):
        frames = np.random.default_rng(6).uniform(size=(3, 8, 8))
        out = decode_feature_video(encode_feature_video(frames, 0))
        assert np.max(np.abs(out - frames)) <= qp_step(0) / 2 + 1e-15

    def test_qp_out_of_range(self):
        with pytest.raises(ValueError):
            encode_feature_video(np.zeros((1, 4, 4)), 52)
        with pytest.raises(ValueError):
            encode_feature_video(np.zeros((1, 4, 4)), -1)


class TestExternalCodec:
    def codec(self):
        stub = [sys.executable, "-m", "streamstgs.codec.extstub"]
        return ExternalCodec(stub + ["encode"], stub + ["decode"], codec_id="stub")

    def test_subprocess_roundtrip(self):
        frames = np.random.default_rng(0).uniform(size=(4, 8, 8))
        codec = self.codec()
        fv = codec.encode(frames, 16)
        assert fv.codec_id == "stub"
        out = codec.decode(fv)
        # 8-bit mapping plus QP-16 stepping on the 0..255 scale
        step = max(1, round(2 ** ((16 - 4) / 6))) / 255.0
        assert np.max(np.abs(out - frames)) <= step / 2 + 1.0 / 255

    def test_internal_decoder_rejects_external_payload(self):
        frames = np.zeros((2, 4, 4))
        fv = self.codec().encode(frames, 20)
        with pytest.raises(DecodeError):
            decode_feature_video(fv)


class TestGopSegment:
    def test_header_and_grid_exact_roundtrip(self):
        model = make_model()
        data = encode_gop(model, qp=20)
        back = decode_gop(data)
        assert back.gaussians.count == model.gaussians.count
        assert back.bank.gop_length == 6 and back.bank.window == 3
        seg = parse_segment(data)
        assert seg.header["qp"] == 20 and seg.header["count"] == 40
        # re-encoding the decoded model reproduces every attribute payload
        data2 = encode_gop(back, qp=20)
        seg2 = parse_segment(data2)
        for name in ("positions", "scales", "rotations", "opacities", "base_colors", "permutation"):
            assert seg.sections[name] == seg2.sections[name], name
        # only the feature video (and its normalization) may change on re-encode
        h1 = {k: v for k, v in seg.header.items() if k != "feature_norm"}
        h2 = {k: v for k, v in seg2.header.items() if k != "feature_norm"}
        assert h1 == h2

    def test_rotation_roundtrip_bound(self):
        model = make_model(seed=2)
        back = decode_gop(encode_gop(model, qp=20))
        err = np.max(np.abs(back.gaussians.rotations - model.gaussians.rotations))
        assert err <= 3.0 / 254 + 1e-12

    def test_opacity_scale_roundtrip_bounds(self):
        model = make_model(seed=3)
        back = decode_gop(encode_gop(model, qp=20))
        assert np.max(np.abs(back.gaussians.opacities - model.gaussians.opacities)) <= 8.0 / 126 + 1e-12
        srange = np.ptp(model.gaussians.scales)
        assert np.max(np.abs(back.gaussians.scales - model.gaussians.scales)) <= srange / 126 + 1e-12

    def test_feature_roundtrip_within_codec_bound(self):
        model = make_model(seed=4)
        back = decode_gop(encode_gop(model, qp=16))
        feats = model.bank.features
        span = feats.max() - feats.min()
        bound = qp_step(16) / 2 * span
        assert np.max(np.abs(back.bank.features - feats)) <= bound + 1e-12

    def test_size_nonincreasing_in_qp(self):
        model = make_model(n=120, g=10, seed=5)
        sizes = [len(encode_gop(model, qp=q)) for q in (16, 20, 24, 28, 32)]
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))
        assert sizes[0] > sizes[-1]

    def test_gaussian_cap_enforced(self):
        model = make_model(n=30)
        with pytest.raises(ValueError):
            encode_gop(model, qp=20, max_gaussians=20)

    def test_corrupted_checksum_rejected(self):
        data = bytearray(encode_gop(make_model(), qp=20))
        data[len(data) // 2] ^= 0xFF
        with pytest.raises(DecodeError):
            decode_gop(bytes(data))

    def test_bad_magic_and_version(self):
        data = bytearray(encode_gop(make_model(), qp=20))
        bad = bytes(b"XXXXX") + bytes(data[5:])
        with pytest.raises(DecodeError):
            decode_gop(bad)
        data[5] = 9
        with pytest.raises(DecodeError):
            decode_gop(bytes(data))

    def test_keyframe_and_feature_split(self):
        model = make_model(seed=6)
        seg = parse_segment(encode_gop(model, qp=20))
        key = decode_keyframe(seg)
        assert key.bank is None
        assert key.gaussians.count == model.gaussians.count
        bank = decode_features(seg)
        assert bank.gaussian_count == model.gaussians.count
        full = decode_gop(encode_gop(model, qp=20))
        np.testing.assert_array_equal(bank.features, full.bank.features)

    def test_feature_video_timing_budget(self):
        import time

        side = 32  # 62 frames of (4*32)^2 = 128x128 tiled scalars
        frames = np.clip(np.random.default_rng(0).uniform(size=(62, 128, 128)), 0, 1)
        t0 = time.time()
        fv = encode_feature_video(frames, 20)
        decode_feature_video(fv)
        assert time.time() - t0 <= 10.0
