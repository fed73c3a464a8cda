"""FOV geometry draws, rasterization, corruption, crop mapping, sample assembly."""
from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import constant_image, disc_mask
from fovx.fovsim import (
    WINDOW_CEIL_HU,
    WINDOW_FLOOR_HU,
    CropTransform,
    FovSpec,
    SimConfig,
    apply_window,
    corrupt,
    crop_to_dfov,
    crop_transform,
    cropped_fov_mask,
    fov_mask,
    generate_sample,
    sample_fov,
)
from fovx.metrics import BBox, severity_from_tci
from fovx.raster import ImageGrid, MaskGrid


def body_slice(dim: int, r: float, hu: float = -50.0) -> tuple[ImageGrid, MaskGrid]:
    """Homogeneous disc phantom centered in the frame."""
    body = disc_mask(dim, dim / 2.0, dim / 2.0, r)
    vals = np.where(body.bits, hu, WINDOW_FLOOR_HU)
    return ImageGrid(vals.astype(float)), body


def centered_spec(pattern: str, dim: int, radius: float) -> FovSpec:
    center = (dim / 2.0, dim / 2.0)
    side = radius * math.sqrt(2.0) if pattern == "a" else 2.0 * radius
    return FovSpec(pattern, center, radius, center, side)


class TestFovSpec:
    def test_pattern_a_side_locked_to_radius(self):
        spec = centered_spec("a", 256, 100.0)
        assert spec.dfov_side / spec.rfov_radius == pytest.approx(math.sqrt(2.0), abs=1e-12)
        with pytest.raises(ValueError):
            FovSpec("a", (128, 128), 100.0, (128, 128), 150.0)

    def test_pattern_b_side_locked_to_diameter(self):
        spec = centered_spec("b", 256, 80.0)
        assert spec.dfov_side == pytest.approx(2.0 * spec.rfov_radius, abs=1e-12)
        with pytest.raises(ValueError):
            FovSpec("b", (128, 128), 80.0, (130, 128), 160.0)

    def test_pattern_c_must_escape_inscribed_square(self):
        # fully inside the inscribed square: the circle can never clip it
        with pytest.raises(ValueError):
            FovSpec("c", (128, 128), 100.0, (128, 128), 80.0)
        # shifted far enough to poke outside: accepted
        FovSpec("c", (128, 128), 100.0, (168, 128), 80.0)

    def test_pattern_c_kept_inside_circle_bbox(self):
        with pytest.raises(ValueError):
            FovSpec("c", (128, 128), 100.0, (200, 128), 80.0)

    def test_dict_round_trip(self):
        spec = FovSpec("c", (128, 128), 100.0, (168, 120), 80.0)
        assert FovSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_pattern_rejected(self):
        with pytest.raises(ValueError):
            FovSpec("d", (0, 0), 10.0, (0, 0), 10.0)


class TestSimConfig:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SimConfig(p_a=0.5, p_b=0.5, p_c=0.5)

    def test_ranges_validated(self):
        with pytest.raises(ValueError):
            SimConfig(r_rfov_range=(0.9, 0.6))
        with pytest.raises(ValueError):
            SimConfig(r_dfov_range=(0.0, 1.0))

    def test_json_round_trip(self):
        cfg = SimConfig(dim=128, p_a=1.0, p_b=0.0, p_c=0.0, seed=7)
        assert SimConfig.from_json(cfg.to_json()) == cfg


class TestSampleFov:
    def test_pattern_a_only(self, rng):
        cfg = SimConfig(p_a=1.0, p_b=0.0, p_c=0.0)
        for _ in range(50):
            spec = sample_fov(cfg, rng)
            assert spec.pattern == "a"
            assert spec.dfov_side / spec.rfov_radius == pytest.approx(math.sqrt(2.0))
            assert spec.dfov_center == spec.rfov_center == (128.0, 128.0)

    def test_pattern_b_only(self, rng):
        cfg = SimConfig(p_a=0.0, p_b=1.0, p_c=0.0)
        for _ in range(50):
            spec = sample_fov(cfg, rng)
            assert spec.pattern == "b"
            assert spec.dfov_side == pytest.approx(2.0 * spec.rfov_radius)

    def test_radius_within_configured_range(self, rng):
        cfg = SimConfig(p_a=1.0, p_b=0.0, p_c=0.0, r_rfov_range=(0.6, 0.9))
        for _ in range(100):
            spec = sample_fov(cfg, rng)
            assert 0.6 * 128.0 <= spec.rfov_radius <= 0.9 * 128.0

    def test_pattern_c_geometry_constraints(self, rng):
        cfg = SimConfig(p_a=0.0, p_b=0.0, p_c=1.0)
        h = math.sqrt(0.5)
        for _ in range(100):
            spec = sample_fov(cfg, rng)
            assert spec.pattern == "c"
            r = spec.rfov_radius
            half = spec.dfov_side / 2.0
            ox = spec.dfov_center[0] - spec.rfov_center[0]
            oy = spec.dfov_center[1] - spec.rfov_center[1]
            # inside the circle's bounding box
            assert abs(ox) + half <= r + 1e-6 * r
            assert abs(oy) + half <= r + 1e-6 * r
            # but never swallowed by the inscribed square
            assert not (abs(ox) + half <= r * h and abs(oy) + half <= r * h)
            # side respects the configured fraction of the diameter
            assert 0.7 * 2 * r - 1e-9 <= spec.dfov_side <= 1.0 * 2 * r + 1e-9

    def test_pattern_frequencies_roughly_match(self, rng):
        cfg = SimConfig()
        n = 3000
        counts = {"a": 0, "b": 0, "c": 0}
        for _ in range(n):
            counts[sample_fov(cfg, rng).pattern] += 1
        assert abs(counts["a"] / n - 0.5) < 0.05
        assert abs(counts["b"] / n - 0.3) < 0.05
        assert abs(counts["c"] / n - 0.2) < 0.05


class TestFovMask:
    def test_pattern_b_is_disc_membership(self):
        dim = 64
        spec = centered_spec("b", dim, 20.0)
        got = fov_mask(spec, dim, dim).bits
        assert np.array_equal(got, disc_mask(dim, 32.0, 32.0, 20.0).bits)

    def test_pattern_a_is_square_membership(self):
        # the inscribed square lies inside the disc, so it alone decides
        dim = 64
        spec = centered_spec("a", dim, 20.0)
        got = fov_mask(spec, dim, dim).bits
        half = spec.dfov_side / 2.0
        ys, xs = np.mgrid[0:dim, 0:dim]
        square = (np.abs(xs + 0.5 - 32.0) <= half) & (np.abs(ys + 0.5 - 32.0) <= half)
        assert np.array_equal(got, square)

    def test_pattern_c_matches_membership_oracle(self):
        dim = 64
        spec = FovSpec("c", (32.0, 32.0), 25.0, (42.0, 30.0), 30.0)
        got = fov_mask(spec, dim, dim).bits
        ys, xs = np.mgrid[0:dim, 0:dim]
        px, py = xs + 0.5, ys + 0.5
        in_disc = (px - 32.0) ** 2 + (py - 32.0) ** 2 <= 25.0**2
        in_sq = (np.abs(px - 42.0) <= 15.0) & (np.abs(py - 30.0) <= 15.0)
        assert np.array_equal(got, in_disc & in_sq)


class TestCorrupt:
    def test_full_mask_is_identity(self):
        img = ImageGrid(np.random.default_rng(0).uniform(-150, 150, (16, 16)))
        full = MaskGrid(np.ones((16, 16), dtype=bool))
        assert np.array_equal(corrupt(img, full).values, img.values)

    def test_empty_mask_fills_everything(self):
        img = constant_image(8, 40.0)
        empty = MaskGrid(np.zeros((8, 8), dtype=bool))
        assert (corrupt(img, empty).values == WINDOW_FLOOR_HU).all()

    def test_half_plane_pixel_by_pixel(self):
        img = ImageGrid(np.arange(64, dtype=float).reshape(8, 8))
        bits = np.zeros((8, 8), dtype=bool)
        bits[:, :4] = True
        out = corrupt(img, MaskGrid(bits), fill=-111.0).values
        for i in range(8):
            for j in range(8):
                expected = img.values[i, j] if j < 4 else -111.0
                assert out[i, j] == expected

    def test_custom_fill_value(self):
        img = constant_image(4, 0.0)
        empty = MaskGrid(np.zeros((4, 4), dtype=bool))
        assert (corrupt(img, empty, fill=-75.0).values == -75.0).all()


class TestApplyWindow:
    def test_clips_to_display_window(self):
        img = ImageGrid(np.array([[-1024.0, -150.0], [90.0, 1800.0]]))
        out = apply_window(img).values
        assert np.array_equal(out, [[-150.0, -150.0], [90.0, 150.0]])
        assert out.min() >= WINDOW_FLOOR_HU and out.max() <= WINDOW_CEIL_HU

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            apply_window(constant_image(2, 0.0), lo=10.0, hi=10.0)


class TestCrop:
    def test_full_frame_crop_is_identity(self):
        dim = 64
        img = ImageGrid(np.random.default_rng(1).uniform(-150, 150, (dim, dim)))
        spec = centered_spec("b", dim, dim / 2.0)
        box = BBox(10.0, 12.0, 40.0, 44.0)
        cropped, mapped = crop_to_dfov(img, box, spec, out_dim=dim)
        assert np.allclose(cropped.values, img.values, rtol=0, atol=1e-12)
        assert mapped == box
        assert cropped.spacing == pytest.approx(img.spacing)

    def test_half_size_centered_box_mapping(self):
        dim = 128
        spec = centered_spec("b", dim, dim / 4.0)  # display square = half frame
        tr = crop_transform(spec, dim)
        mapped = tr.forward_box(BBox(0.0, 0.0, float(dim), float(dim)))
        assert mapped.as_tuple() == (-dim / 2.0, -dim / 2.0, 1.5 * dim, 1.5 * dim)

    def test_box_round_trip(self, rng):
        tr = CropTransform(x0=17.25, y0=-3.5, scale=1.75)
        for _ in range(50):
            x0, y0 = rng.uniform(-50, 50, 2)
            w, h = rng.uniform(0, 80, 2)
            box = BBox(x0, y0, x0 + w, y0 + h)
            back = tr.inverse_box(tr.forward_box(box))
            assert np.allclose(back.as_tuple(), box.as_tuple(), rtol=0, atol=1e-9)

    def test_crop_upsamples_to_requested_grid(self):
        dim = 64
        img = constant_image(dim, 25.0)
        spec = centered_spec("b", dim, 16.0)  # side 32 -> zoom by 2
        cropped, _ = crop_to_dfov(img, BBox(0, 0, dim, dim), spec, out_dim=dim)
        assert cropped.values.shape == (dim, dim)
        assert np.allclose(cropped.values, 25.0)
        assert cropped.spacing == pytest.approx(img.spacing / 2.0)

    def test_cropped_fov_mask_identity_case(self):
        dim = 64
        spec = centered_spec("b", dim, dim / 2.0)
        assert np.array_equal(
            cropped_fov_mask(spec, dim).bits, fov_mask(spec, dim, dim).bits
        )


class TestGenerateSample:
    def _cfg(self, dim=128, **kw):
        base = dict(dim=dim, p_a=1.0, p_b=0.0, p_c=0.0, augment=False)
        base.update(kw)
        return SimConfig(**base)

    def test_seeded_determinism(self):
        img, body = body_slice(128, 45.0)
        cfg = SimConfig(dim=128)
        s1 = generate_sample(img, body, cfg, np.random.default_rng(99))
        s2 = generate_sample(img, body, cfg, np.random.default_rng(99))
        assert s1.spec == s2.spec
        assert s1.tci == s2.tci
        assert np.array_equal(s1.corrupted.values, s2.corrupted.values)
        assert np.array_equal(s1.cropped.values, s2.cropped.values)
        assert s1.gt_bbox == s2.gt_bbox

    def test_interior_body_untouched(self):
        img, body = body_slice(128, 25.0)
        cfg = self._cfg(r_rfov_range=(0.9, 0.9))
        s = generate_sample(img, body, cfg, np.random.default_rng(0))
        assert s.tci == 0.0
        assert s.severity.value == "none"
        assert np.array_equal(s.corrupted.values, s.uncorrupted.values)

    def test_oversized_body_truncated(self):
        img, body = body_slice(128, 55.0)
        cfg = self._cfg(p_a=0.0, p_b=1.0, r_rfov_range=(0.6, 0.6))
        s = generate_sample(img, body, cfg, np.random.default_rng(0))
        assert s.tci > 0.0
        assert not np.array_equal(s.corrupted.values, s.uncorrupted.values)

    def test_corruption_invariant_exact(self):
        img, body = body_slice(128, 50.0)
        cfg = SimConfig(dim=128)
        for seed in range(5):
            s = generate_sample(img, body, cfg, np.random.default_rng(seed))
            expected = np.where(s.fov_mask.bits, s.uncorrupted.values, cfg.fill_hu)
            assert np.array_equal(s.corrupted.values, expected)

    def test_gt_bbox_round_trips_through_crop(self):
        img, body = body_slice(128, 50.0)
        cfg = SimConfig(dim=128)
        for seed in range(5):
            s = generate_sample(img, body, cfg, np.random.default_rng(seed))
            tr = crop_transform(s.spec, cfg.dim)
            back = tr.inverse_box(s.gt_bbox_cropped_space)
            assert np.allclose(back.as_tuple(), s.gt_bbox.as_tuple(), rtol=0, atol=1e-6)

    def test_severity_is_pure_function_of_tci(self):
        img, body = body_slice(128, 50.0)
        cfg = SimConfig(dim=128)
        for seed in range(8):
            s = generate_sample(img, body, cfg, np.random.default_rng(seed))
            assert s.severity is severity_from_tci(s.tci)

    def test_input_window_applied(self):
        dim = 128
        body = disc_mask(dim, 64.0, 64.0, 30.0)
        vals = np.where(body.bits, 900.0, -1000.0)  # beyond the window both ways
        img = ImageGrid(vals.astype(float))
        s = generate_sample(img, body, self._cfg(r_rfov_range=(0.9, 0.9)),
                            np.random.default_rng(3))
        assert s.uncorrupted.values.max() <= WINDOW_CEIL_HU
        assert s.uncorrupted.values.min() >= WINDOW_FLOOR_HU

    def test_truncated_input_rejected(self):
        dim = 64
        bits = np.ones((dim, dim), dtype=bool)
        img = constant_image(dim, 0.0)
        with pytest.raises(ValueError):
            generate_sample(img, MaskGrid(bits), self._cfg(dim=dim), np.random.default_rng(0))

    def test_empty_body_rejected(self):
        img = constant_image(64, -150.0)
        empty = MaskGrid(np.zeros((64, 64), dtype=bool))
        with pytest.raises(ValueError):
            generate_sample(img, empty, self._cfg(dim=64), np.random.default_rng(0))

    def test_wrong_shape_rejected(self):
        img, body = body_slice(64, 20.0)
        with pytest.raises(ValueError):
            generate_sample(img, body, self._cfg(dim=128), np.random.default_rng(0))
