import numpy as np
import pytest

from streamstgs import autodiff as ad
from streamstgs.core import (
    CameraModel,
    DeformationField,
    FrameDeformation,
    GaussianSet,
    TemporalFeatureBank,
    covariance_matrices,
    decode_deformation,
    deform,
    normalized_quaternions,
    positional_encode,
    quaternions_to_rotations,
    temporal_forward,
    window_features,
)


def make_set(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianSet(
        positions=rng.standard_normal((n, 3)),
        scales=rng.standard_normal((n, 3)) * 0.3 - 1.0,
        rotations=rng.standard_normal((n, 4)) + np.array([2.0, 0, 0, 0]),
        opacities=rng.standard_normal((n, 1)),
        base_colors=rng.standard_normal((n, 3)) * 0.5 + 0.4,
    )


def make_field(window=3, seed=1, scale=0.3):
    rng = np.random.default_rng(seed)
    f = DeformationField.create(window, rng=rng)
    for k in f.params:
        f.params[k] = rng.standard_normal(f.params[k].shape) * scale
    return f


def zero_field(window=3):
    f = DeformationField.create(window)
    for k in f.params:
        f.params[k] = np.zeros_like(f.params[k])
    return f


class TestPositionalEncode:
    def test_t_zero(self):
        np.testing.assert_allclose(positional_encode(0.0, 2), [0, 1, 0, 1], atol=1e-15)

    def test_t_half(self):
        np.testing.assert_allclose(positional_encode(0.5, 2), [1, 0, 0, -1], atol=1e-15)

    def test_t_quarter(self):
        s = np.sin(np.pi / 4)
        np.testing.assert_allclose(positional_encode(0.25, 3), [s, s, 1, 0, 0, -1], atol=1e-15)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            positional_encode(np.nan, 2)
        with pytest.raises(ValueError):
            positional_encode(np.inf, 2)

    def test_rejects_bad_bands(self):
        with pytest.raises(ValueError):
            positional_encode(0.1, 0)


class TestFeatureBank:
    def test_slot_count_matches_paper_example(self):
        bank = TemporalFeatureBank.zeros(60, 3, count=4)
        assert bank.slot_count == 62

    def test_slot_count_exhaustive(self):
        for g in range(1, 101):
            for w in (1, 3, 5):
                bank = TemporalFeatureBank.zeros(g, w, count=1)
                assert bank.slot_count == g + w - 1

    def test_rejects_even_window(self):
        with pytest.raises(ValueError):
            TemporalFeatureBank.zeros(10, 2, count=1)

    def test_rejects_wrong_slot_count(self):
        with pytest.raises(ValueError):
            TemporalFeatureBank(10, 3, np.zeros((11, 2, 16)))


class TestWindowFeatures:
    def test_single_slot_identity(self):
        feats = np.random.default_rng(0).standard_normal((1, 4, 16))
        bank = TemporalFeatureBank(1, 1, feats)
        np.testing.assert_array_equal(window_features(bank, 0), feats[0])

    def test_consumes_expected_slots(self):
        rng = np.random.default_rng(1)
        feats = rng.standard_normal((24, 3, 16))
        bank = TemporalFeatureBank(20, 5, feats)
        got = window_features(bank, 7)
        want = np.concatenate([feats[7 + k] for k in range(5)], axis=1)
        np.testing.assert_array_equal(got, want)

    def test_adjacent_windows_overlap(self):
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((12, 2, 16))
        bank = TemporalFeatureBank(10, 3, feats)
        a = window_features(bank, 4)
        b = window_features(bank, 5)
        # last (W-1)*F columns of frame i == first (W-1)*F columns of frame i+1
        np.testing.assert_array_equal(a[:, 16:], b[:, :32])

    def test_out_of_range(self):
        bank = TemporalFeatureBank.zeros(10, 3, count=1)
        with pytest.raises(IndexError):
            window_features(bank, 10)
        with pytest.raises(IndexError):
            window_features(bank, -1)


class TestTemporalForward:
    def test_zero_weights_zero_output(self):
        field = zero_field()
        fe = np.random.default_rng(0).standard_normal((5, 48))
        np.testing.assert_array_equal(temporal_forward(field, fe, 0.3), np.zeros((5, 64)))

    def test_zero_features_uses_encoding_block(self):
        field = make_field()
        fe = np.zeros((4, 48))
        got = temporal_forward(field, fe, 0.0)
        enc = positional_encode(0.0, field.time_bands)
        want = np.tanh(enc @ field.params["d_t"][48:])
        np.testing.assert_allclose(got, np.broadcast_to(want, (4, 64)), atol=1e-12)

    def test_output_inside_unit_interval(self):
        field = make_field(scale=0.15)
        fe = np.random.default_rng(3).standard_normal((10, 48))
        f = temporal_forward(field, fe, 0.9)
        assert np.all(np.abs(f) < 1.0)
        # extreme inputs saturate to +-1 in float64 but never escape the bound
        f = temporal_forward(make_field(scale=50.0), fe * 100, 0.9)
        assert np.all(np.abs(f) <= 1.0)

    def test_shape_mismatch(self):
        field = make_field()
        with pytest.raises(ValueError):
            temporal_forward(field, np.zeros((5, 47)), 0.1)

    def test_timestamp_range(self):
        field = make_field()
        with pytest.raises(ValueError):
            temporal_forward(field, np.zeros((2, 48)), 1.5)


class TestDecodeDeformation:
    def test_zero_network(self):
        field = zero_field()
        f = np.random.default_rng(0).standard_normal((6, 64))
        d = decode_deformation(field, f, [0.0, 0.0, 1.0])
        for arr in (d.dx, d.dscale, d.dquat, d.dopacity, d.dcolor):
            np.testing.assert_array_equal(arr, np.zeros_like(arr))

    def test_view_independence_of_geometry(self):
        field = make_field()
        f = np.random.default_rng(1).standard_normal((6, 64))
        d1 = decode_deformation(field, f, [0.0, 0.0, 1.0])
        d2 = decode_deformation(field, f, [0.0, 0.0, -1.0])
        np.testing.assert_array_equal(d1.dx, d2.dx)
        np.testing.assert_array_equal(d1.dscale, d2.dscale)
        np.testing.assert_array_equal(d1.dquat, d2.dquat)
        assert np.max(np.abs(ad.val(d1.dopacity) - ad.val(d2.dopacity))) > 0
        assert np.max(np.abs(ad.val(d1.dcolor) - ad.val(d2.dcolor))) > 0

    def test_opacity_delta_bounded(self):
        field = make_field(scale=0.5)
        f = np.random.default_rng(2).standard_normal((8, 64))
        d = decode_deformation(field, f, [1.0, 0.0, 0.0])
        assert np.all(np.abs(ad.val(d.dopacity)) < 1.0)
        d = decode_deformation(make_field(scale=20.0), f * 50, [1.0, 0.0, 0.0])
        assert np.all(np.abs(ad.val(d.dopacity)) <= 1.0)

    def test_near_unit_view_normalized_silently(self):
        field = make_field()
        f = np.zeros((2, 64))
        decode_deformation(field, f, [0.0, 0.0, 1.0005])

    def test_far_from_unit_view_rejected(self):
        field = make_field()
        with pytest.raises(ValueError):
            decode_deformation(field, np.zeros((2, 64)), [0.0, 0.0, 2.0])


class TestDeform:
    def test_zero_deformation_identity_with_relu_color(self):
        g = make_set()
        g.base_colors[0] = [-0.5, 0.2, -0.1]
        out = deform(g, FrameDeformation.zeros(g.count))
        np.testing.assert_array_equal(out.positions, g.positions)
        np.testing.assert_array_equal(out.scales, g.scales)
        np.testing.assert_array_equal(out.rotations, g.rotations)
        np.testing.assert_array_equal(out.opacities, g.opacities)
        np.testing.assert_array_equal(out.base_colors, np.maximum(g.base_colors, 0.0))

    def test_uniform_shift(self):
        g = make_set()
        d = FrameDeformation.zeros(g.count)
        d.dx = np.tile([1.0, 0.0, 0.0], (g.count, 1))
        out = deform(g, d)
        np.testing.assert_array_equal(out.positions, g.positions + [1.0, 0.0, 0.0])

    def test_count_mismatch(self):
        g = make_set(n=4)
        with pytest.raises(ValueError):
            deform(g, FrameDeformation.zeros(5))


class TestRotations:
    def test_identity_quaternion(self):
        r = quaternions_to_rotations(np.array([[1.0, 0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(r[0], np.eye(3), atol=1e-15)

    def test_rotation_is_orthonormal(self):
        rng = np.random.default_rng(3)
        q = normalized_quaternions(rng.standard_normal((20, 4)))
        r = ad.val(quaternions_to_rotations(q))
        for m in r:
            np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(m) > 0

    def test_degenerate_quaternion_rejected(self):
        with pytest.raises(ValueError):
            normalized_quaternions(np.array([[1e-9, 0.0, 0.0, 0.0]]))

    def test_covariance_psd(self):
        g = make_set(10)
        sig = ad.val(covariance_matrices(g.scales, g.rotations))
        for m in sig:
            np.testing.assert_allclose(m, m.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(m) > 0)


class TestCameraModel:
    def make(self):
        k = np.array([[100.0, 0, 32], [0, 100.0, 32], [0, 0, 1]])
        return CameraModel(k, np.eye(4), 64, 64)

    def test_view_dir_identity_pose(self):
        np.testing.assert_allclose(self.make().view_dir, [0, 0, 1])

    def test_rejects_bad_rotation(self):
        w = np.eye(4)
        w[0, 1] = 0.5
        with pytest.raises(ValueError):
            CameraModel(np.eye(3) * [100, 100, 1] + np.array([[0, 0, 32], [0, 0, 32], [0, 0, 0]]), w, 64, 64)

    def test_rejects_lower_triangular_k(self):
        k = np.array([[100.0, 0, 0], [5.0, 100.0, 0], [0, 0, 1]])
        with pytest.raises(ValueError):
            CameraModel(k, np.eye(4), 64, 64)


class TestSerialization:
    def test_roundtrip(self):
        field = make_field(window=5)
        blob = field.to_bytes()
        back = DeformationField.from_bytes(blob)
        assert back.window == 5 and back.feature_dim == 16
        for name in field.LAYER_ORDER:
            np.testing.assert_allclose(back.params[name], field.params[name].astype(np.float32), atol=0)

    def test_f32_layer_major_layout(self):
        field = make_field()
        blob = field.to_bytes()
        n_layers = int(np.frombuffer(blob[:4], "<u4")[0])
        assert n_layers == 9
        # header: 4 + 9*8 + 12 bytes, then d_t as little-endian f32
        off = 4 + n_layers * 8 + 12
        first = np.frombuffer(blob, "<f4", count=60 * 64, offset=off).reshape(60, 64)
        np.testing.assert_allclose(first, field.params["d_t"].astype(np.float32))
