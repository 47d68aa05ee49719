import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthfit.effects import (
    CaptureParams,
    Theta,
    add_object_noise,
    apply_capture,
    boundary_band,
    boundary_blur,
    format_theta_record,
    motion_blur,
    noise_seed,
    read_theta_records,
    synthesize,
    write_theta_records,
)
from synthfit.errors import DataError, ShapeMismatchError
from synthfit.imaging import convolve, gaussian_kernel, oriented_gaussian_kernel
from synthfit.render import Pose, composite, render_object

from conftest import smooth_image


def random_theta(r, w=40, h=40):
    pose = Pose(*r.uniform(-math.pi, math.pi, 3), *r.uniform([12, 12], [w - 12, h - 12]))
    cap = CaptureParams(
        r.uniform(0, 3), r.uniform(0, 3), r.uniform(0, 3), r.uniform(-math.pi, math.pi), r.uniform(0, 0.1), r.uniform(0, 1)
    )
    return Theta(pose, cap)


def chebyshev_dilate(mask, radius):
    """Brute-force dilation by a (2r+1)^2 square."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y, x in zip(*np.nonzero(mask)):
        out[max(0, y - radius) : y + radius + 1, max(0, x - radius) : x + radius + 1] = True
    return out


class TestParams:
    def test_negative_sigma(self):
        with pytest.raises(DataError):
            CaptureParams(sigma_s=-1)

    def test_w_d_range(self):
        with pytest.raises(DataError):
            CaptureParams(w_d=1.5)

    def test_vector_has_eleven(self, rng):
        t = random_theta(rng)
        v = t.to_vector()
        assert v.shape == (11,)
        assert Theta.from_vector(v) == t

    def test_suppress(self, rng):
        t = random_theta(rng).suppress(["mb", "rn"])
        c = t.capture
        assert (c.sigma_mu, c.sigma_mv, c.alpha_m, c.sigma_n) == (0, 0, 0, 0)
        assert c.sigma_s > 0

    def test_suppress_unknown(self, rng):
        with pytest.raises(DataError):
            random_theta(rng).suppress(["xx"])


class TestMotionBlur:
    def test_zero_sigma_unchanged(self, rng):
        img = rng.random((10, 10))
        np.testing.assert_array_equal(motion_blur(img, rng.random((10, 10)) < 0.5, 0, 0, 1.0), img)

    @given(st.floats(0, 4), st.floats(0, 4), st.floats(-4, 4))
    @settings(max_examples=30, deadline=None)
    def test_unmasked_bitwise_unchanged(self, su, sv, a):
        r = np.random.default_rng(0)
        img = r.random((16, 16))
        mask = np.zeros((16, 16), bool)
        mask[4:11, 5:12] = True
        out = motion_blur(img, mask, su, sv, a)
        np.testing.assert_array_equal(out[~mask], img[~mask])

    def test_half_turn_symmetry(self, rng):
        img = rng.random((20, 20))
        mask = rng.random((20, 20)) < 0.7
        np.testing.assert_allclose(motion_blur(img, mask, 2, 0.5, 0.0), motion_blur(img, mask, 2, 0.5, math.pi), atol=1e-12)

    def test_masked_renormalized_reference(self, rng):
        img = rng.random((9, 9))
        mask = rng.random((9, 9)) < 0.6
        k = oriented_gaussian_kernel(1.2, 0.4, 0.7)
        out = motion_blur(img, mask, 1.2, 0.4, 0.7)
        np.testing.assert_allclose(out, convolve(img, k, mask), atol=0)

    def test_mask_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            motion_blur(rng.random((5, 5)), np.ones((5, 6), bool), 1, 1, 0)


class TestBoundaryBlur:
    def test_zero_sigma_unchanged(self, rng):
        img = rng.random((10, 10))
        np.testing.assert_array_equal(boundary_blur(img, rng.random((10, 10)) < 0.5, 0.0), img)

    def test_band_is_distance_to_boundary(self, rng):
        mask = np.zeros((30, 30), bool)
        mask[8:20, 10:24] = True
        mask[12, 3] = True
        for radius in (1, 2, 4):
            band = boundary_band(mask, radius)
            ref = chebyshev_dilate(mask, radius) & chebyshev_dilate(~mask, radius)
            np.testing.assert_array_equal(band, ref)

    def test_far_pixels_unchanged(self, rng):
        img = rng.random((30, 30))
        mask = np.zeros((30, 30), bool)
        mask[10:20, 10:20] = True
        out = boundary_blur(img, mask, 1.0)
        band = boundary_band(mask, 3)
        np.testing.assert_array_equal(out[~band], img[~band])
        assert not np.array_equal(out[band], img[band])

    def test_step_edge_matches_erf(self):
        w = 40
        img = np.zeros((20, w))
        img[:, w // 2 :] = 1.0
        mask = np.zeros((20, w), bool)
        mask[:, w // 2 :] = True
        out = boundary_blur(img, mask, 1.0)
        row = out[10]
        taps = gaussian_kernel(1.0)
        # discrete Gaussian-smoothed step: fraction of taps falling on the bright side
        for x in range(w // 2 - 3, w // 2 + 3):
            k = np.arange(-3, 4)
            expect = taps[(x - k) >= w // 2].sum()
            assert row[x] == pytest.approx(expect, abs=1e-12)
            # and the continuous profile 0.5 * erfc((edge - x) / sqrt 2), edge half a pixel left of the bright column
            assert row[x] == pytest.approx(0.5 * math.erfc((w // 2 - 0.5 - x) / math.sqrt(2)), abs=0.02)


class TestNoise:
    def test_zero_sigma(self, rng):
        img = rng.random((5, 5))
        np.testing.assert_array_equal(add_object_noise(img, np.ones((5, 5), bool), 0.0, rng), img)

    def test_sample_std(self):
        img = np.full((100, 100), 0.5)
        out = add_object_noise(img, np.ones((100, 100), bool), 0.05, np.random.default_rng(3))
        assert 0.045 <= out.std() <= 0.055

    def test_deterministic_and_local(self, rng):
        img = rng.random((12, 12))
        mask = rng.random((12, 12)) < 0.5
        a = add_object_noise(img, mask, 0.2, np.random.default_rng(9))
        b = add_object_noise(img, mask, 0.2, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a[~mask], img[~mask])
        assert a.min() >= 0 and a.max() <= 1

    def test_noise_seed_stable(self):
        assert noise_seed("a", 0) == noise_seed("a", 0)
        assert noise_seed("a", 0) != noise_seed("a", 1)
        assert noise_seed("a", 0) != noise_seed("b", 0)


class TestSynthesize:
    def test_zero_capture_is_composite(self, blob_mesh, render_cfg, rng):
        bg = smooth_image(rng)
        pose = Pose(0.3, 0.2, -0.4, 20, 21)
        img, mask = synthesize(Theta(pose, CaptureParams(w_d=0.7)), bg, blob_mesh, render_cfg, rng)
        layer, m2 = render_object(blob_mesh, pose, 0.7, render_cfg)
        assert np.array_equal(img, composite(layer, m2, bg)) and np.array_equal(mask, m2)

    def test_stage_by_stage(self, blob_mesh, render_cfg, rng):
        bg = smooth_image(rng)
        theta = random_theta(rng)
        img, _ = synthesize(theta, bg, blob_mesh, render_cfg, np.random.default_rng(5))
        c = theta.capture
        layer, mask = render_object(blob_mesh, theta.pose, c.w_d, render_cfg)
        x = motion_blur(layer, mask, c.sigma_mu, c.sigma_mv, c.alpha_m)
        x = composite(x, mask, bg)
        x = boundary_blur(x, mask, c.sigma_s)
        x = add_object_noise(x, mask, c.sigma_n, np.random.default_rng(5))
        np.testing.assert_array_equal(img, x)

    def test_only_boundary_blur_stays_in_band(self, blob_mesh, render_cfg, rng):
        bg = smooth_image(rng)
        pose = Pose(0.1, 0.5, 0.2, 20, 20)
        plain, mask = synthesize(Theta(pose, CaptureParams(w_d=0.5)), bg, blob_mesh, render_cfg, rng)
        blurred, _ = synthesize(Theta(pose, CaptureParams(sigma_s=1.5, w_d=0.5)), bg, blob_mesh, render_cfg, rng)
        band = boundary_band(mask, 5)
        np.testing.assert_array_equal(blurred[~band], plain[~band])

    def test_background_untouched_outside_dilated_mask(self, blob_mesh, render_cfg):
        r = np.random.default_rng(11)
        bg = smooth_image(r)
        for _ in range(30):
            theta = random_theta(r)
            img, mask = synthesize(theta, bg, blob_mesh, render_cfg, r)
            far = ~chebyshev_dilate(mask, math.ceil(3 * theta.capture.sigma_s))
            np.testing.assert_array_equal(img[far], bg[far])

    def test_deterministic(self, blob_mesh, render_cfg, rng):
        bg = smooth_image(rng)
        theta = random_theta(rng)
        a, _ = synthesize(theta, bg, blob_mesh, render_cfg, np.random.default_rng(1))
        b, _ = synthesize(theta, bg, blob_mesh, render_cfg, np.random.default_rng(1))
        assert np.array_equal(a, b)

    def test_apply_capture_consistent(self, blob_mesh, render_cfg, rng):
        bg = smooth_image(rng)
        theta = random_theta(rng)
        layer, mask = render_object(blob_mesh, theta.pose, theta.capture.w_d, render_cfg)
        a = apply_capture(layer, mask, bg, theta.capture, np.random.default_rng(2))
        b, _ = synthesize(theta, bg, blob_mesh, render_cfg, np.random.default_rng(2))
        assert np.array_equal(a, b)


class TestThetaRecords:
    def test_round_trip_bitwise(self, tmp_path, rng):
        recs = [(f"img{i}", random_theta(rng)) for i in range(5)]
        write_theta_records(tmp_path / "t.txt", recs)
        back = read_theta_records(tmp_path / "t.txt")
        assert [s for s, _ in back] == [s for s, _ in recs]
        for (_, a), (_, b) in zip(recs, back):
            assert np.array_equal(a.to_vector(), b.to_vector())

    def test_append(self, tmp_path, rng):
        p = tmp_path / "t.txt"
        write_theta_records(p, [("a", random_theta(rng))])
        write_theta_records(p, [("b", random_theta(rng))], append=True)
        assert [s for s, _ in read_theta_records(p)] == ["a", "b"]

    def test_bad_seed_id(self, rng):
        with pytest.raises(DataError):
            format_theta_record("two words", random_theta(rng))

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("x 1 2 3\n")
        with pytest.raises(DataError):
            read_theta_records(p)
